ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str, capsys=None) -> None:
    """Remember one acceptance line and echo it immediately."""
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
