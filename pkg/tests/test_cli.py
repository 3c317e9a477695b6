import json
import subprocess
import sys

from tensorprim.cli import main


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_plan_worked_example(capsys):
    code, out, _ = run_cli(["plan", "tanh(T0) + (T1 matmul T2) / (T3 - T4)",
                            "--args", "4x4,4x4,4x4,4x4,4x4"], capsys)
    assert code == 0
    assert "root register score: 2" in out
    assert "temp slots: 2" in out


def test_plan_relu_single_step(capsys):
    code, out, _ = run_cli(["plan", "relu(T0)"], capsys)
    assert code == 0
    assert "temp slots: 1" in out
    assert sum(ln.lstrip().startswith("t=") for ln in out.splitlines()) == 1


def test_plan_balanced_tree(capsys):
    code, out, _ = run_cli(["plan", "((T0+T1)+(T2+T3)) + ((T4+T5)+(T6+T7))"], capsys)
    assert code == 0
    assert "temp slots: 3" in out


def test_plan_parse_error_exit_code(capsys):
    code, _, err = run_cli(["plan", "tanh(T0"], capsys)
    assert code == 2
    assert "position" in err


def test_plan_json_format(capsys):
    code, out, _ = run_cli(["plan", "relu(T0)", "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(out)[0]
    assert doc["temp_count"] == 1
    assert doc["steps"][0]["op"] == "relu"


def test_plan_dot_output(tmp_path, capsys):
    dot = tmp_path / "plan.dot"
    code, _, _ = run_cli(["plan", "tanh(T0) + T1", "--dot", str(dot)], capsys)
    assert code == 0
    assert "digraph" in dot.read_text()


def test_verify_subset_passes(capsys):
    code, out, _ = run_cli(["verify", "--only",
                            "core-bf16-roundtrip,equation-worked-example"], capsys)
    assert code == 0
    assert "2/2 checks passed" in out


def test_verify_unknown_check_usage_error(capsys):
    code, _, err = run_cli(["verify", "--only", "no-such-check"], capsys)
    assert code == 2
    assert "no-such-check" in err


def test_verify_report_formats(tmp_path, capsys):
    out_path = tmp_path / "report.json"
    code, _, _ = run_cli(["verify", "--only", "core-bf16-roundtrip",
                          "--format", "json", "--out", str(out_path)], capsys)
    assert code == 0
    doc = json.loads(out_path.read_text())
    assert doc[0]["name"] == "core-bf16-roundtrip" and doc[0]["passed"]

    csv_path = tmp_path / "report.csv"
    code, _, _ = run_cli(["verify", "--only", "core-bf16-roundtrip",
                          "--format", "csv", "--out", str(csv_path)], capsys)
    assert code == 0
    assert csv_path.read_text().splitlines()[0].startswith("budget,detail")


def test_verify_fault_injection_negative_control(capsys):
    """The reduce-order fault breaks the fused-vs-oracle bitwise checks but
    not the planner minimality check, and the failure exits nonzero."""
    code, out, _ = run_cli(["verify", "--inject-fault", "reduce-order", "--only",
                            "equation-minimality,kernels-embedding-fused"], capsys)
    assert code == 1
    assert "[PASS] equation-minimality" in out
    assert "[FAIL] kernels-embedding-fused" in out
    # and the fault does not leak into subsequent runs
    code2, out2, _ = run_cli(["verify", "--only", "kernels-embedding-fused"], capsys)
    assert code2 == 0


def test_verify_seed_determinism(capsys):
    args = ["verify", "--only", "kernels-softmax", "--seed", "11"]
    _, out1, _ = run_cli(args, capsys)
    _, out2, _ = run_cli(args, capsys)
    assert out1 == out2


def test_bench_reports_metrics(capsys):
    code, out, _ = run_cli(["bench", "--op", "brgemm", "--m", "16", "--n", "16",
                            "--k", "16", "--count", "4", "--repeats", "2"], capsys)
    assert code == 0
    assert "GFLOP/s" in out


def test_bench_softmax_scratch_comparison(capsys):
    code, out, _ = run_cli(["bench", "--op", "softmax", "--repeats", "2"], capsys)
    assert code == 0
    assert "scratch fused/naive" in out


def test_bench_deterministic_checksums(capsys):
    args = ["bench", "--op", "brgemm", "--m", "8", "--n", "8", "--k", "8",
            "--count", "2", "--repeats", "1", "--format", "json", "--seed", "3"]
    _, out1, _ = run_cli(args, capsys)
    _, out2, _ = run_cli(args, capsys)
    assert json.loads(out1)[0]["checksum"] == json.loads(out2)[0]["checksum"]


def test_approx_report_and_coefficients(tmp_path, capsys):
    coeff = tmp_path / "coeff.json"
    code, out, _ = run_cli(["approx-report", "--coefficients", str(coeff)], capsys)
    assert code == 0
    assert "approx-pade-tanh" in out
    doc = json.loads(coeff.read_text())
    assert "tanh_pade78" in doc and "minimax" in doc


def test_console_script_entrypoint():
    proc = subprocess.run([sys.executable, "-m", "tensorprim.cli", "plan", "relu(T0)"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "temp slots: 1" in proc.stdout


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "tensorprim.cli", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
