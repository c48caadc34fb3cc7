import xml.etree.ElementTree as ET

import numpy as np

from runaway_lab.diagnostics import PowerLawFit
from runaway_lab.svgplot import Figure, bar_chart, guide_plot, power_law_panel

NS = "{http://www.w3.org/2000/svg}"


def parse(text):
    return ET.fromstring(text)


def test_render_is_valid_svg_with_one_polyline_per_series():
    fig = Figure(title="a & b", xlabel="t", ylabel="v")
    fig.add([0, 1, 2], [1, 4, 9], label="sq")
    fig.add([0, 1, 2], [2, 2, 2], dashed=True)
    root = parse(fig.render())
    assert len(root.findall(f"{NS}polyline")) == 2
    assert any(t.text == "a & b" for t in root.iter(f"{NS}text"))


def test_log_axes_drop_nonpositive_points():
    fig = Figure(logx=True, logy=True)
    fig.add([0.0, 1.0, 10.0, 100.0], [1.0, -1.0, 0.1, 0.01], markers=True)
    root = parse(fig.render())
    assert len(root.findall(f"{NS}circle")) == 2


def test_render_is_deterministic(tmp_path):
    x = np.linspace(0, 1, 20)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    guide_plot(a, x, x**2, 0.5)
    guide_plot(b, x, x**2, 0.5)
    assert a.read_bytes() == b.read_bytes()


def test_bar_chart_handles_negative_values(tmp_path):
    path = tmp_path / "bars.svg"
    bar_chart(path, ["a", "b", "c"], [1.0, -2.0, 0.5])
    rects = parse(path.read_text()).findall(f"{NS}rect")
    heights = [float(r.get("height")) for r in rects[1:]]
    assert len(heights) == 3 and all(h >= 0 for h in heights)
    assert heights[1] > heights[0] > heights[2]


def test_power_law_panel_with_fit(tmp_path):
    x = np.array([1.0, 2.0, 4.0])
    fit = PowerLawFit(-2.0, 3.0, 1.0, (1.0, 4.0), 3)
    power_law_panel(tmp_path / "p.svg", x, -3.0 * x**-2, fit)
    root = parse((tmp_path / "p.svg").read_text())
    assert any("slope -2.000" in (t.text or "") for t in root.iter(f"{NS}text"))
