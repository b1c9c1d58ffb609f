import math
import xml.etree.ElementTree as ET

import pytest

from nodal_lab.svg import emit_svg_loglog, render_svg_loglog
from nodal_lab.verification import ScalingFit

NS = "{http://www.w3.org/2000/svg}"


def make_fit(n=6, slope=0.5, stderr=0.01):
    xs = [math.log(float(2 ** i)) for i in range(1, n + 1)]
    return ScalingFit(ladder="zonal[8..64]", observable="NodalLength", resolution=512, indices=list(range(n)),
                      log_lambda=xs, log_value=[0.3 + slope * x for x in xs], slope=slope,
                      slope_stderr=stderr, intercept=0.3, residual_rms=0.0)


def test_svg_is_well_formed():
    root = ET.fromstring(render_svg_loglog(make_fit()).encode())
    assert root.tag == NS + "svg"
    assert root.find(NS + "title") is not None
    assert len(root.findall(f"{NS}circle[@class='point']")) == 6
    assert len(root.findall(f"{NS}line[@class='fit']")) == 1


def test_slope_annotation():
    root = ET.fromstring(render_svg_loglog(make_fit()).encode())
    (label,) = root.findall(f"{NS}text[@class='slope']")
    assert label.text.startswith("slope = 0.50")


def test_svg_bytes_are_reproducible(tmp_path):
    a = emit_svg_loglog(make_fit(slope=-0.125), tmp_path / "a.svg")
    b = emit_svg_loglog(make_fit(slope=-0.125), tmp_path / "b.svg")
    assert open(a, "rb").read() == open(b, "rb").read()
    assert "slope = -0.12" in open(a).read() or "slope = -0.13" in open(a).read()


def test_too_few_points_rejected():
    with pytest.raises(ValueError):
        render_svg_loglog(make_fit(n=4))


def test_nonfinite_stderr_is_omitted():
    text = render_svg_loglog(make_fit(stderr=float("nan")))
    assert "+/-" not in text
