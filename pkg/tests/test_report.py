import pytest
from openpyxl import load_workbook

from app.zlik.errors import DataFormatError, MissingArtifactError
from app.zlik.schemas.report import OVERALL, ConfusionMatrix, EvalCell, EvalReport, ReportBundle
from app.zlik.services.report_service import (
    CONFUSION_JSON,
    REPORT_JSON,
    REPORT_TXT,
    REPORT_XLSX,
    fmt_cell,
    load_reports,
    render_compare_text,
    render_confusion_text,
    write_reports,
)


def _cell(mean: float, count: int = 10) -> EvalCell:
    return EvalCell(mse_mean=mean, mse_std=mean / 10, per_dim_mean=[mean] * 6, per_dim_std=[0.0] * 6, count=count)


@pytest.fixture
def bundle() -> ReportBundle:
    return ReportBundle(
        protocol="compare",
        config_hash="abcdef0123456789",
        rows=["zlik", "clean", "clean+ft 1s"],
        reports=[
            EvalReport(protocol="compare", model="zlik", variant="zlik", parameters=1234,
                       cells={"fall": _cell(0.5), OVERALL: _cell(0.25, 30)}),
            EvalReport(protocol="compare", model="clean", variant="clean", parameters=1000,
                       cells={"fall": _cell(1.5), OVERALL: _cell(0.75, 30)}),
            EvalReport(protocol="compare", model="clean+ft 1s", variant="clean", cells={"fall": _cell(1.25)}),
        ],
        breakdown_classes=["fall", "mtpsb"],
    )


@pytest.fixture
def cm() -> ConfusionMatrix:
    return ConfusionMatrix(
        model="zlik",
        classes=["fall", "no_damage"],
        mean=[[1.0, 3.0], [2.0, 0.5]],
        std=[[0.1, 0.3], [0.2, 0.05]],
        count=[[5, 5], [5, 5]],
        seed=1,
    )


def test_fmt_cell():
    assert fmt_cell(_cell(1.2345)) == "1.23 ± 0.12"
    assert fmt_cell(None) == "n/a"


def test_compare_text_layout(bundle):
    text = render_compare_text(bundle)
    assert text.startswith("protocol: compare\nconfig: abcdef012345\n")
    fall = text.index("[fall]")
    assert fall < text.index("[overall]") < text.index("[fall per dimension]") < text.index("[parameters]")
    block = text[fall:text.index("[overall]")]
    assert block.index("zlik") < block.index("clean ") < block.index("clean+ft 1s")
    assert "0.50 ± 0.05" in block
    assert "[mtpsb" not in text
    assert "clean+ft 1s" not in text[text.index("[overall]"):text.index("[fall per dimension]")]


def test_confusion_text(cm):
    text = render_confusion_text(cm)
    assert "described \\ true" in text
    assert "diagonal column-minimal: 2/2" in text
    assert cm.max_row_deviation() == pytest.approx(2.5)


def test_write_and_load(tmp_path, bundle, cm):
    written = write_reports(tmp_path, bundle=bundle, cm=cm)
    assert {p.name for p in written} == {REPORT_JSON, REPORT_TXT, CONFUSION_JSON, "confusion.txt", REPORT_XLSX}
    loaded_bundle, loaded_cm = load_reports(tmp_path)
    assert loaded_bundle == bundle and loaded_cm == cm

    wb = load_workbook(tmp_path / REPORT_XLSX)
    assert wb.sheetnames == ["compare", "confusion"]
    rows = list(wb["compare"].iter_rows(values_only=True))
    assert rows[0][:5] == ("Класс", "Модель", "MSE", "Std", "Окна")
    assert rows[1][:3] == ("fall", "zlik", 0.5)
    assert len(rows) == 1 + 3 + 2
    grid = list(wb["confusion"].iter_rows(values_only=True))
    assert grid[1] == ("fall", 1.0, 3.0)


def test_write_without_xlsx(tmp_path, cm):
    written = write_reports(tmp_path, cm=cm, xlsx=False)
    assert not (tmp_path / REPORT_XLSX).exists()
    assert load_reports(tmp_path) == (None, cm)
    assert len(written) == 2


def test_load_errors(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_reports(tmp_path)
    (tmp_path / REPORT_JSON).write_text("{broken", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_reports(tmp_path)


def test_confusion_must_be_square():
    with pytest.raises(ValueError):
        ConfusionMatrix(model="m", classes=["a", "b"], mean=[[1.0]], std=[[0.0]], count=[[1]])
