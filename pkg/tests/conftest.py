import numpy as np
import pytest

from ldegen import diffcore as dc


def gradient_errors(build, arrays: dict, step: float = 1e-5) -> dict[str, float]:
    """Max relative error of tape gradients vs central differences, per named input.

    ``build(tape, leaves)`` must return a scalar node; ``leaves`` maps the
    names in ``arrays`` to trainable tape leaves.
    """
    tape = dc.Tape()
    leaves = {k: tape.param(v, k) for k, v in arrays.items()}
    loss = build(tape, leaves)
    grads = dc.backward(tape, loss)

    errors = {}
    for name in arrays:
        def f(x, name=name):
            t = dc.Tape(record=False)
            vals = {k: t.constant(x if k == name else v) for k, v in arrays.items()}
            return float(build(t, vals).value)

        numeric = dc.numerical_gradient(f, arrays[name], step)
        errors[name] = dc.relative_error(grads[name], numeric)
    return errors


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[tuple[str, str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ACCEPTANCE.append((str(number), title, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(ACCEPTANCE, key=lambda r: (len(r[0]), r[0])):
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}" + (f" | {detail}" if detail else ""))
