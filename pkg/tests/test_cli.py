"""Scenario ingestion, exit codes, output files, and overrides."""
import json

import pytest

from heterosim.cli import (
    ParseError,
    ValidationError,
    build_world_from_script,
    load_scenario,
    main,
)
from heterosim.config import SimConfig


def write(tmp_path, name, payload) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return str(path)


class TestLoadScenario:
    def test_builtin_rescue(self, tmp_path):
        script = load_scenario(write(tmp_path, "s.json", {"builtin": "rescue"}))
        assert script.builtin == "rescue"

    def test_unknown_builtin(self, tmp_path):
        with pytest.raises(ValidationError):
            load_scenario(write(tmp_path, "s.json", {"builtin": "warp"}))

    def test_invalid_json_reports_position(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_scenario(write(tmp_path, "s.json", "{broken"))
        assert "line" in str(exc.value)

    def test_scout_port_out_of_range(self, tmp_path):
        payload = {
            "modules": [
                {"id": "s1", "kind": "scout", "pos": [0, 0]},
                {"id": "s2", "kind": "scout", "pos": [0.105, 0]},
            ],
            "timeline": [
                {"tick": 0, "module": "s1",
                 "directive": {"type": "dock_with", "peer": "s2",
                               "own_port": 7, "peer_port": 0}},
            ],
        }
        with pytest.raises(ValidationError) as exc:
            load_scenario(write(tmp_path, "s.json", payload))
        assert "port 7" in str(exc.value)

    def test_duplicate_timeline_key(self, tmp_path):
        payload = {
            "modules": [{"id": "s1", "kind": "scout"}],
            "timeline": [
                {"tick": 3, "module": "s1", "directive": {"type": "wait", "ticks": 1}},
                {"tick": 3, "module": "s1", "directive": {"type": "wait", "ticks": 2}},
            ],
        }
        with pytest.raises(ValidationError) as exc:
            load_scenario(write(tmp_path, "s.json", payload))
        assert "duplicate timeline key" in str(exc.value)

    def test_duplicate_module_id(self, tmp_path):
        payload = {"modules": [{"id": "x", "kind": "scout"},
                               {"id": "x", "kind": "backbone"}]}
        with pytest.raises(ValidationError):
            load_scenario(write(tmp_path, "s.json", payload))

    def test_unknown_kind(self, tmp_path):
        payload = {"modules": [{"id": "x", "kind": "rover"}]}
        with pytest.raises(ValidationError):
            load_scenario(write(tmp_path, "s.json", payload))

    def test_timeline_sorted_on_load(self, tmp_path):
        payload = {
            "modules": [{"id": "a", "kind": "scout"}, {"id": "b", "kind": "scout",
                                                       "pos": [1, 0]}],
            "timeline": [
                {"tick": 5, "module": "a", "directive": {"type": "wait", "ticks": 1}},
                {"tick": 1, "module": "b", "directive": {"type": "wait", "ticks": 1}},
            ],
        }
        script = load_scenario(write(tmp_path, "s.json", payload))
        assert [(e.tick, e.module_id) for e in script.timeline] == [(1, "b"), (5, "a")]

    def test_connection_validation(self, tmp_path):
        payload = {
            "modules": [
                {"id": "w1", "kind": "active_wheel", "pos": [0, 0]},
                {"id": "w2", "kind": "active_wheel", "pos": [0.105, 0]},
            ],
            "connections": [{"a": "w1", "port_a": 0, "b": "w2", "port_b": 0}],
        }
        script = load_scenario(write(tmp_path, "s.json", payload))
        with pytest.raises(ValidationError) as exc:
            build_world_from_script(script, SimConfig())
        assert "ShapeIncompatible" in str(exc.value)

    def test_passive_module_parameters(self, tmp_path):
        payload = {
            "modules": [
                {"id": "p", "kind": "passive",
                 "passive": {"ports": 2, "mass": 3.0, "energy_wh": 50.0}},
            ],
        }
        script = load_scenario(write(tmp_path, "s.json", payload))
        world = build_world_from_script(script, SimConfig())
        assert world.modules["p"].spec.mass_kg == 3.0
        assert world.modules["p"].spec.battery.energy_full_wh == 50.0


class TestRunCommand:
    def test_assembly_builtin(self, tmp_path, capsys):
        scenario = write(tmp_path, "s.json", {"builtin": "assembly"})
        out = str(tmp_path / "events.jsonl")
        report_path = str(tmp_path / "report.json")
        code = main(["run", "--scenario", scenario, "--out", out,
                     "--report", report_path])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["total_mips"] == 12400
        assert report["speeds"] == {"before_lift": 6.0, "after_lift": 31.0}
        assert list(report.keys()) == [
            "organisms", "total_mips", "total_wh", "speeds", "rescue_success"]

    def test_rescue_builtin(self, tmp_path):
        scenario = write(tmp_path, "s.json", {"builtin": "rescue"})
        code = main(["run", "--scenario", scenario,
                     "--out", str(tmp_path / "e.jsonl"),
                     "--report", str(tmp_path / "r.json")])
        assert code == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["rescue_success"] is True

    def test_missing_scenario_exits_1(self, tmp_path, capsys):
        code = main(["run", "--scenario", str(tmp_path / "nope.json")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_rescuer_out_of_range_exits_2(self, tmp_path):
        scenario = write(tmp_path, "s.json", {
            "builtin": "rescue", "params": {"rescuer_distance_m": 2.5}})
        code = main(["run", "--scenario", scenario,
                     "--out", str(tmp_path / "e.jsonl"),
                     "--report", str(tmp_path / "r.json")])
        assert code == 2
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["rescue_success"] is False

    def test_override_extends_wireless_range(self, tmp_path):
        scenario = write(tmp_path, "s.json", {
            "builtin": "rescue", "params": {"rescuer_distance_m": 2.5}})
        code = main(["run", "--scenario", scenario,
                     "--out", str(tmp_path / "e.jsonl"),
                     "--report", str(tmp_path / "r.json"),
                     "--set", "wireless_range=3.0"])
        assert code == 0

    def test_bad_override_exits_1(self, tmp_path, capsys):
        scenario = write(tmp_path, "s.json", {"builtin": "rescue"})
        assert main(["run", "--scenario", scenario, "--set", "warp_speed=9"]) == 1
        assert main(["run", "--scenario", scenario, "--set", "dt=-1"]) == 1

    def test_timeline_scenario_runs(self, tmp_path):
        scenario = write(tmp_path, "s.json", {
            "modules": [{"id": "s1", "kind": "scout"}],
            "timeline": [{"tick": 0, "module": "s1",
                          "directive": {"type": "move", "distance": 0.125}}],
            "max_ticks": 100,
        })
        out = tmp_path / "e.jsonl"
        code = main(["run", "--scenario", scenario, "--out", str(out),
                     "--report", str(tmp_path / "r.json")])
        assert code == 0
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert any(rec["event"] == "MoveStart" for rec in lines)
        assert all(list(rec.keys()) == ["tick", "t", "event", "subjects", "data"]
                   for rec in lines)

    def test_repeat_runs_byte_identical(self, tmp_path):
        scenario = write(tmp_path, "s.json", {"builtin": "assembly"})
        paths = []
        for i in (1, 2):
            out = tmp_path / f"e{i}.jsonl"
            rep = tmp_path / f"r{i}.json"
            assert main(["run", "--scenario", scenario, "--out", str(out),
                         "--report", str(rep)]) == 0
            paths.append((out.read_bytes(), rep.read_bytes()))
        assert paths[0] == paths[1]

    def test_env_defaults_and_flag_priority(self, tmp_path, monkeypatch):
        defaults = write(tmp_path, "defaults.json", {"wireless_range": 0.5})
        monkeypatch.setenv("HETEROSIM_CONFIG", defaults)
        scenario = write(tmp_path, "s.json", {"builtin": "rescue"})
        # Env default shrinks the radio range below the 1.5 m gap: infeasible.
        code = main(["run", "--scenario", scenario,
                     "--out", str(tmp_path / "e.jsonl"),
                     "--report", str(tmp_path / "r.json")])
        assert code == 2
        # An explicit flag wins over the env default.
        code = main(["run", "--scenario", scenario,
                     "--out", str(tmp_path / "e.jsonl"),
                     "--report", str(tmp_path / "r.json"),
                     "--set", "wireless_range=2.0"])
        assert code == 0


class TestOtherCommands:
    def test_validate_ok(self, tmp_path, capsys):
        scenario = write(tmp_path, "s.json", {"builtin": "assembly"})
        assert main(["validate", "--scenario", scenario]) == 0
        assert "ok" in capsys.readouterr().out

    def test_validate_bad(self, tmp_path, capsys):
        scenario = write(tmp_path, "s.json", {"modules": [{"id": "x", "kind": "ufo"}]})
        assert main(["validate", "--scenario", scenario]) == 1

    def test_list_builtins(self, capsys):
        assert main(["list-builtins"]) == 0
        out = capsys.readouterr().out
        assert "assembly" in out and "rescue" in out

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run"])  # missing --scenario
        assert exc.value.code == 1

    def test_assembly_missing_backbone_fails_at_load(self, tmp_path, capsys):
        # Builtin precondition: at least two Backbones and two Active Wheels.
        from heterosim.experiments import ScenarioError, run_assembly_experiment
        from heterosim.model import ModuleKind, World

        world = World()
        world.add_module("aw1", ModuleKind.ACTIVE_WHEEL)
        world.add_module("aw2", ModuleKind.ACTIVE_WHEEL, pos=(1, 0))
        world.add_module("bb1", ModuleKind.BACKBONE, pos=(2, 0))
        with pytest.raises(ScenarioError):
            run_assembly_experiment(world=world)
