RESULTS = []


def record(number, title, passed, detail, seconds):
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'} | {title} | {detail} | {seconds:.1f}s"
    RESULTS.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(RESULTS):
            terminalreporter.write_line(line)
