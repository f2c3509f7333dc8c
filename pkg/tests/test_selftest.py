from src.selftest import (
    CHECKS, SelftestOutcome, check_entropy_schur_concavity, check_entropy_sensitivity, check_flow_euler,
    check_flow_schur_convexity, check_forward_stability, check_jacobian_identification, check_ntk_spectrum,
    check_step_size_guard, format_table,
)

CHECK_KEYS = ["jacobian", "ntk_spectrum", "flow_euler", "entropy_bound",
              "flow_schur", "entropy_schur", "forward", "step_size"]


def test_small_checks_pass():
    """测试缩小规模的自检项均通过"""
    assert check_jacobian_identification(nets=5)[0]
    assert check_ntk_spectrum(instances=3)[0]
    assert check_flow_euler()[0]
    assert check_flow_schur_convexity(pairs=200)[0]
    assert check_entropy_schur_concavity(pairs=200)[0]


def test_entropy_sensitivity_check():
    """测试谱熵敏感度检查在前几个网络上通过"""
    passed, detail = check_entropy_sensitivity(nets=3)
    assert passed, detail
    assert "3/3" in detail


def test_forward_stability_check():
    """测试前向稳定性与 GMSI 占优检查"""
    passed, detail = check_forward_stability(nets=1, pairs=200)
    assert passed, detail


def test_step_size_guard_check():
    """测试曲率步长保护：界内单调下降，超界被拒绝且无保护时发散"""
    passed, detail = check_step_size_guard(runs=2)
    assert passed, detail
    assert "超界步长被拒绝 True" in detail
    assert "无保护时发散 True" in detail


def test_check_keys():
    """测试自检项的键固定且不重复"""
    keys = [key for key, _, _ in CHECKS]
    assert keys == CHECK_KEYS
    assert len(set(keys)) == 8


def test_format_table():
    """测试结果表格以检查键开头并带汇总行"""
    outcomes = [
        SelftestOutcome("a", "first check", True, "ok", 0.1),
        SelftestOutcome("b", "second", False, "bad", 0.2),
    ]
    table = format_table(outcomes)
    lines = table.splitlines()
    assert lines[0].startswith("a  first check : PASS")
    assert lines[1].startswith("b  second      : FAIL")
    assert lines[-1].endswith("1/2 PASS")
    assert outcomes[1].to_dict()["status"] == "FAIL"
