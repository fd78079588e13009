import pytest

from edgeburst.config import ConfigError, list_presets, load_config, load_preset, parse_config

MINIMAL = """
name = "tiny"
seed = 4

[model]
N = 3
v1 = 0.7
v2 = 1.0
gamma = 0.6

[particles]
p = 1
initial_sites = [2]

[evolution]
t_max = 2.0
steps = 20
"""


def with_extra(extra, base=MINIMAL):
    return base + "\n" + extra


class TestParse:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.steps == 20 and cfg.mode == "exact" and cfg.lcu == "exact_onsite"
        assert cfg.termination == 0.995 and cfg.vicinity == 1 and cfg.method == "integral"
        assert cfg.directory == "runs/tiny" and cfg.noise is None and cfg.scan is None
        assert cfg.params().N == 3

    def test_auto_steps(self):
        cfg = parse_config(MINIMAL.replace("steps = 20", 'steps = "auto"'))
        assert cfg.steps is None

    def test_interactions_table(self):
        cfg = parse_config(MINIMAL.replace("gamma = 0.6", "gamma = 0.6\ninteractions = { 1 = 6.0, 3 = 2 }"))
        assert cfg.model.interactions == {1: 6.0, 3: 2.0}

    def test_noise_and_mitigation(self):
        cfg = parse_config(with_extra("""
[execution]
mode = "shots"
shots = 100
[noise]
p1 = 1e-4
p2 = 1e-3
readout = [[0.01, 0.02], [0.03, 0.04], [0.0, 0.0], [0.0, 0.0]]
[mitigation]
lambdas = [1, 1.5, 2]
twirls = 4
"""))
        nm = cfg.noise_model()
        assert nm.readout_pair(1) == (0.03, 0.04)
        assert cfg.mitigation.lambdas == (1.0, 1.5, 2.0) and cfg.mitigation.twirls == 4

    def test_readout_length_checked(self):
        text = with_extra("[noise]\nreadout = [[0.01, 0.02], [0.0, 0.0]]")
        with pytest.raises(ConfigError, match="needs 4 pairs"):
            parse_config(text)

    def test_expansion_lcu(self):
        cfg = parse_config(MINIMAL.replace("steps = 20", "steps = 20\nlcu = { kappa = 2, pairs = 1 }"))
        sol = cfg.lcu_spec(0.1)
        assert sol.order == 2 and len(sol.pairs) == 1

    def test_hash_ignores_output_location(self):
        a = parse_config(MINIMAL)
        b = parse_config(with_extra('[outputs]\ndirectory = "elsewhere"\nplots = false'))
        c = parse_config(MINIMAL.replace("seed = 4", "seed = 5"))
        assert a.config_hash() == b.config_hash() != c.config_hash()

    @pytest.mark.parametrize("old,new,line,fragment", [
        ("v1 = 0.7", 'v1 = "fast"', 7, "v1 must be of type float"),
        ("gamma = 0.6", "gamma = -1.0", 9, "gamma must be positive"),
        ("initial_sites = [2]", "initial_sites = [2, 3]", 13, "initial_sites"),
        ("initial_sites = [2]", "initial_sites = [6]", 13, "must lie in"),
        ("steps = 20", "steps = 0", 17, "steps"),
        ("steps = 20", 'steps = "many"', 17, "steps"),
        ("t_max = 2.0", "t_max = 2.0\nbogus = 1", 17, "unknown key 'bogus'"),
    ])
    def test_errors_carry_line_numbers(self, old, new, line, fragment):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL.replace(old, new), "cfg.toml")
        assert exc.value.line == line
        assert fragment in str(exc.value)
        assert str(exc.value).startswith(f"cfg.toml:{line}:")

    def test_missing_table(self):
        with pytest.raises(ConfigError, match=r"missing table \[model\]"):
            parse_config('name = "x"')

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[broken\n")
        assert exc.value.line is not None

    def test_mitigation_needs_noise(self):
        with pytest.raises(ConfigError, match="noise"):
            parse_config(with_extra("[mitigation]\ntwirls = 2"))

    @pytest.mark.parametrize("lam", ["[1.5, 2]", "[1, 1]", "[1]"])
    def test_bad_lambdas(self, lam):
        with pytest.raises(ConfigError):
            parse_config(with_extra(f"[noise]\np1 = 0.0\n[mitigation]\nlambdas = {lam}"))

    def test_bad_readout(self):
        with pytest.raises(ConfigError, match="readout"):
            parse_config(with_extra("[noise]\nreadout = [0.5, 1.5]"))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.toml")

    def test_load_file(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text(MINIMAL)
        assert load_config(f).name == "tiny"


class TestPresets:
    def test_all_presets_load(self):
        names = list_presets()
        assert {"edge-burst-N8", "trivial-N8", "edge-burst-N64", "trivial-N64",
                "spectral-scan-N16", "extended-N12", "z2-N14", "z3-N14", "cluster-N14",
                "cluster-N14-trivial", "mitigation-N8"} <= set(names)
        for n in names:
            cfg = load_preset(n)
            assert cfg.name == n

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_preset("nope")

    @pytest.mark.parametrize("name,v1_le_v2", [("edge-burst-N8", True), ("trivial-N8", False),
                                               ("edge-burst-N64", True), ("trivial-N64", False),
                                               ("cluster-N14", True),
                                               ("cluster-N14-trivial", False)])
    def test_regimes(self, name, v1_le_v2):
        m = load_preset(name).model
        assert (m.v1 <= m.v2) == v1_le_v2

    def test_interacting_ranges(self):
        assert set(load_preset("z2-N14").model.interactions) == {1, 2, 3}
        assert set(load_preset("z3-N14").model.interactions) == {1, 2, 3, 4, 5}
        assert load_preset("extended-N12").p == 2
