import numpy as np
import pytest

from tdrp.config import ConfigError, apply_overrides, dump_config, load_config, parse_pairs, preset
from tdrp.ppo import Policy, PpoConfig
from tdrp.representation import Encoder, TdrpConfig
from tdrp.storage import (load_checkpoint, read_csv, read_demonstrations, save_checkpoint, write_csv,
                          write_demonstrations)


def test_presets_are_valid():
    for env in ("chain", "umaze", "chain2skill"):
        cfg = preset(env).validate()
        assert cfg.env.env_id == env
    with pytest.raises(ConfigError):
        preset("nope")


def test_paper_scale_constants_in_presets():
    assert preset("umaze").reward.lambda1 == 2.5
    assert preset("chain2skill").reward.n_clusters == 20


def test_dump_then_load_round_trips(tmp_path):
    cfg = load_config(None, ["tdrp.step=12", "seeds=1,2,3", "ppo.hidden=32,16", "reward.lambda1=0.75"],
                      env_id="chain")
    path = tmp_path / "cfg.txt"
    path.write_text(dump_config(cfg))
    again = load_config(str(path))
    assert dump_config(again) == dump_config(cfg)
    assert again.tdrp.step == 12 and again.seeds == (1, 2, 3) and again.ppo.hidden == (32, 16)


def test_env_id_in_file_selects_preset(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nenv.env_id = chain   # trailing\n\niterations = 7\n")
    cfg = load_config(str(path))
    assert cfg.env.env_id == "chain" and cfg.env.horizon == 64 and cfg.iterations == 7


def test_goal_state_override_parses_vector():
    cfg = load_config(None, ["reward.mode=goal_state", "reward.goal_state=0.1,0.2"], env_id="umaze")
    np.testing.assert_allclose(cfg.reward.goal_state, [0.1, 0.2])


@pytest.mark.parametrize("override", ["bogus=1", "ppo.bogus=1", "zzz.step=3", "tdrp.step=abc",
                                      "tdrp.step=0", "eval_episodes=0", "reward.mode=skill_chain",
                                      "env.env_id=maze", "seeds="])
def test_bad_overrides_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, [override], env_id="chain")


def test_parse_pairs_requires_equals():
    with pytest.raises(ConfigError):
        parse_pairs("iterations 5")


def test_apply_overrides_leaves_original_untouched():
    base = preset("chain")
    new = apply_overrides(base, [("iterations", "3")])
    assert base.iterations == 200 and new.iterations == 3


def test_checkpoint_round_trip(tmp_path, rng):
    pol = Policy.create(4, 2, PpoConfig(hidden=(8, 8), init_log_std=-0.4), rng)
    enc = Encoder.create(4, TdrpConfig(embed_dim=3, hidden=(6,)), rng)
    enc.rounds = 5
    goals = rng.normal(size=(3, 4))
    path = save_checkpoint(tmp_path / "ck" / "checkpoint.npz", pol, enc, "iterations = 1\n", 9, goals)
    pol2, enc2, meta, goals2 = load_checkpoint(path.parent)
    for a, b in zip(pol.arrays() + enc.params.arrays(), pol2.arrays() + enc2.params.arrays()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(goals, goals2)
    assert meta["iteration"] == 9 and enc2.rounds == 5 and enc2.config == enc.config
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(pol.mean(x), pol2.mean(x))


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.npz")


def test_csv_floats_round_trip_exactly(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, np.float64(2.5)]
    write_csv(tmp_path / "a.csv", ["i", "v"], [[i, v] for i, v in enumerate(vals)])
    rows = read_csv(tmp_path / "a.csv")
    assert [float(r["v"]) for r in rows] == [float(v) for v in vals]


def test_demonstrations_round_trip(tmp_path, rng):
    trajs = [rng.normal(size=(5, 3)), rng.normal(size=(2, 3))]
    write_demonstrations(tmp_path / "d.csv", trajs)
    back = read_demonstrations(tmp_path / "d.csv")
    assert len(back) == 2
    for a, b in zip(trajs, back):
        np.testing.assert_array_equal(a, b)


def test_bare_state_file_reads_as_goal_states(tmp_path):
    (tmp_path / "g.csv").write_text("x,y\n0.5,0.25\n1.0,2.0\n")
    back = read_demonstrations(tmp_path / "g.csv")
    assert [b.shape for b in back] == [(1, 2), (1, 2)]
    np.testing.assert_array_equal(back[1], [[1.0, 2.0]])
