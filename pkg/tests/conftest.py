import re


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if not m or rep.when not in ("call", "setup"):
                continue
            detail = dict(rep.user_properties).get("detail", "")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines[int(m.group(1))] = f"criterion {int(m.group(1)):>2}: {verdict}  {detail}"
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
