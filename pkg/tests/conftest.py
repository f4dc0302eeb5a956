"""Shared pytest hooks.

Acceptance tests tag themselves with ``record_property("criterion", n)`` and
``record_property("summary", text)``; the terminal summary then prints one
PASS/FAIL line per criterion.
"""


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or (rep.when != "call" and outcome != "error"):
                continue
            status = "PASS" if outcome == "passed" else "FAIL"
            n = props["criterion"]
            if lines.get(n, ("PASS",))[0] == "FAIL":
                continue
            lines[n] = (status, props.get("summary", rep.nodeid), props.get("detail", ""))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        status, summary, detail = lines[n]
        text = f"criterion {n:2d}: {status}  {summary}"
        if detail:
            text += f"  [{detail}]"
        terminalreporter.write_line(text)
