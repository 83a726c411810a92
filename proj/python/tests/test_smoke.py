import numpy as np
import pytest

import boxhunt as bh

SMALL = {
    "train": {"epochs": 2, "steps_per_epoch": 5, "batch_size": 16, "replay_capacity": 64,
              "hidden_dims": [16], "seed": 3},
    "features": {"grid": 4},
}


def test_geometry():
    b, g = bh.Box(0, 0, 10, 10), bh.Box(5, 0, 15, 10)
    assert bh.iou(b, g) == pytest.approx(50 / 150)
    assert bh.recall(b, g) == pytest.approx(0.5)
    s = bh.subregion(bh.Box(0, 0, 100, 80), 0, 0.5, 1.0)
    assert s.as_tuple() == (0, 0, 50, 40)
    assert bh.clamp(bh.Box(-5, 2, 1, 3), 20, 20).width >= 3
    assert bh.movement_reward(0.3, 0.4) == 1
    assert bh.trigger_reward(0.5, 0.5, 3) == 3
    with pytest.raises(ValueError):
        bh.subregion(s, 9)


def test_synth_and_round_trip(tmp_path):
    d = bh.synth(6, 24, 20, seed=2)
    assert len(d) == 6
    scene = d[0]
    assert scene.pixels.shape == (20, 24)
    assert scene.classes == ["target"]
    manifest = d.write(str(tmp_path / "data"))
    back = bh.load_dataset(str(manifest))
    assert len(back) == 6
    assert np.array_equal(back[0].pixels, scene.pixels)
    assert back.find(scene.id).boxes == scene.boxes
    train, test = bh.split(d, 0.5, 1)
    assert (len(train), len(test)) == (3, 3)


def test_env_episode():
    scene = bh.synth(1, 32, 32, seed=4)[0]
    env = bh.Env(scene, {"env": {"variant": "dynamic"}, "features": {"grid": 4}})
    assert env.num_actions == 9
    assert env.state.shape == (env.state_size,)
    reward, done, box, value = env.step(4)
    assert reward in (-1.0, 1.0) and not done
    assert 0.0 <= value <= 1.0
    reward, done, _, _ = env.step(8)
    assert done and abs(reward) == 3
    env.reset()
    assert env.steps == 0 and env.box == bh.Box(0, 0, 32, 32)


def test_train_evaluate_render(tmp_path):
    data = bh.synth(12, 32, 32, seed=5)
    result = bh.train(data, SMALL, checkpoint_dir=str(tmp_path))
    assert len(result.checkpoints) == 2 and len(result.log) == 2
    assert result.log[0]["epsilon"] == 0.9
    net, variant = bh.load_checkpoint(str(tmp_path / "epoch_001.ckpt"))
    assert variant == "hierarchical" and net == result.policy

    again = bh.train(data, SMALL)
    assert again.policy == result.policy

    report = bh.evaluate(result.policy, data, SMALL)
    assert len(report["scenes"]) == 12 and len(report["traces"]) == 12
    assert 0.0 <= report["average_iou"] <= 1.0
    baseline = bh.evaluate(None, data, SMALL, seed=1)
    assert len(baseline["traces"]) == 12

    trace = report["traces"][0]
    svg = bh.render_svg(trace, data.find(trace["scene"]))
    assert svg.startswith("<?xml") and "data:image/png;base64," in svg


def test_config_errors():
    with pytest.raises(bh.ConfigError):
        bh.train(bh.synth(2, 16, 16), {"train": {"gama": 0.5}})
    with pytest.raises(ValueError):
        bh.Env(bh.synth(1, 16, 16)[0], {"env": {"variant": "sideways"}})
