import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tabablate.errors import EmptySpec
from tabablate.plot import Curve, PlotSpec, render_plot

NS = "{http://www.w3.org/2000/svg}"


def elements(svg, tag):
    return ET.fromstring(svg).findall(f".//{NS}{tag}")


def dashed_lines(svg):
    return [e for e in elements(svg, "line") if e.get("stroke-dasharray")]


def test_single_flat_curve_with_horizontal_guardrail():
    spec = PlotSpec([Curve("flat", np.full(11, 0.8))], horizontal=0.5, height=360)
    svg = render_plot(spec)
    lines = dashed_lines(svg)
    assert len(lines) == 1
    line = lines[0]
    # plot area spans y = 316 (value 0) to y = 28 (value 1)
    expected = 316 - (316 - 28) * 0.5
    assert float(line.get("y1")) == float(line.get("y2")) == expected
    assert float(line.get("x1")) < float(line.get("x2"))
    polyline = elements(svg, "polyline")[0]
    ys = {float(p.split(",")[1]) for p in polyline.get("points").split()}
    assert ys == {316 - 288 * 0.8}


def test_identical_curves_are_deterministic():
    c = Curve("a", np.linspace(0.9, 0.4, 6), np.full(6, 0.05))
    spec = PlotSpec([c, Curve("b", c.mean.copy(), c.std.copy())], horizontal=0.5, vertical=0.4)
    a, b = render_plot(spec), render_plot(spec)
    assert a.encode() == b.encode()
    polys = elements(a, "polyline")
    assert len(polys) == 2 and polys[0].get("points") == polys[1].get("points")


def test_four_baseline_overlay(tmp_path):
    rng = np.random.default_rng(0)
    curves = [Curve(name, np.sort(rng.random(25))[::-1], np.full(25, 0.02))
              for name in ("training", "constant_median", "opposite_class", "nearest_neighbors")]
    path = tmp_path / "overlay.svg"
    svg = render_plot(PlotSpec(curves, horizontal=0.52, vertical=0.7, title="constant median", path=path))
    assert path.read_text() == svg
    assert len(elements(svg, "polyline")) == 4
    assert len(elements(svg, "polygon")) == 4  # std bands
    guard = dashed_lines(svg)
    assert sorted(e.get("class") for e in guard) == ["guardrail horizontal", "guardrail vertical"]
    texts = [t.text for t in elements(svg, "text")]
    for name in ("training", "nearest_neighbors", "fraction of features ablated", "model capability"):
        assert name in texts


def test_band_brackets_mean():
    svg = render_plot(PlotSpec([Curve("a", np.array([0.8, 0.6, 0.4]), np.array([0.1, 0.1, 0.1]))]))
    pts = elements(svg, "polygon")[0].get("points").split()
    ys = [float(p.split(",")[1]) for p in pts]
    mean_ys = [float(p.split(",")[1]) for p in elements(svg, "polyline")[0].get("points").split()]
    upper, lower = ys[:3], ys[3:][::-1]
    assert all(u < m < lo for u, m, lo in zip(upper, mean_ys, lower))  # svg y grows downwards


def test_values_clipped_to_unit_axes():
    svg = render_plot(PlotSpec([Curve("a", np.array([1.3, -0.2]))]))
    ys = [float(p.split(",")[1]) for p in elements(svg, "polyline")[0].get("points").split()]
    assert ys == [28.0, 316.0]


def test_labels_are_escaped():
    svg = render_plot(PlotSpec([Curve("a<b & c", np.ones(2))], title="x > y"))
    ET.fromstring(svg)
    assert "a&lt;b &amp; c" in svg


def test_no_guardrails_no_dashes():
    svg = render_plot(PlotSpec([Curve("a", np.ones(3))]))
    assert not dashed_lines(svg)
    assert not re.search(r"stroke-dasharray", svg)


def test_empty_spec():
    with pytest.raises(EmptySpec):
        render_plot(PlotSpec([]))
