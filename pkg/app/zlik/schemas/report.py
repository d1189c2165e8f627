from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, model_validator

OVERALL = "overall"
DAMAGED = "damaged"


class EvalCell(BaseModel):
    """MSE по окнам одной ячейки: среднее ± std, разбивка по 6 измерениям, число окон."""
    mse_mean: float = Field(ge=0)
    mse_std: float = Field(ge=0)
    per_dim_mean: list[float]
    per_dim_std: list[float]
    count: int = Field(gt=0)


class EvalReport(BaseModel):
    protocol: str
    model: str
    variant: str
    weights_hash: str = ""
    config_hash: str = ""
    dataset_hash: str = ""
    cells: dict[str, EvalCell] = Field(default_factory=dict)
    absent: list[str] = Field(default_factory=list)
    parameters: Optional[int] = None


class ConfusionMatrix(BaseModel):
    """Ячейка (i, j): MSE при описании класса i на испытаниях истинного класса j."""
    model: str
    classes: list[str]
    mean: list[list[float]]
    std: list[list[float]]
    count: list[list[int]]
    seed: int = 0

    @model_validator(mode="after")
    def _square(self) -> ConfusionMatrix:
        n = len(self.classes)
        for grid in (self.mean, self.std, self.count):
            if len(grid) != n or any(len(row) != n for row in grid):
                raise ValueError("матрица ошибок должна быть квадратной по числу классов")
        if any(v < 0 for row in self.mean for v in row):
            raise ValueError("MSE не может быть отрицательной")
        return self

    def diagonal_wins(self) -> int:
        """Число столбцов, где диагональ минимальна по столбцу."""
        n = len(self.classes)
        return sum(
            1 for j in range(n)
            if all(self.mean[j][j] <= self.mean[i][j] for i in range(n))
        )

    def max_row_deviation(self) -> float:
        n = len(self.classes)
        return max(
            (abs(self.mean[i][j] - self.mean[0][j]) for i in range(n) for j in range(n)),
            default=0.0,
        )


class AlignmentEval(BaseModel):
    windows: int
    classes: list[str]
    text_to_traj_accuracy: float
    traj_to_text_accuracy: float
    z_x_std_min: float
    z_x_std: list[float]
    synonym_texts: Optional[list[str]] = None
    synonym_cosine: Optional[float] = None
    synonym_max_other_cosine: Optional[float] = None
    synonym_nearest: Optional[list[str]] = None


class ReportBundle(BaseModel):
    protocol: str = "compare"
    config_hash: str = ""
    rows: list[str] = Field(default_factory=list)
    reports: list[EvalReport] = Field(default_factory=list)
    confusion: Optional[ConfusionMatrix] = None
    breakdown_classes: list[str] = Field(default_factory=list)

    def report(self, model: str) -> Optional[EvalReport]:
        return next((r for r in self.reports if r.model == model), None)
