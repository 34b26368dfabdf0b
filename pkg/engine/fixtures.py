"""
Фикстуры: пары мер источник/цель для экспериментов
"""
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Sequence

import numpy as np

from storage.repository import MeasureRepository
from transport.errors import MeasureError
from transport.measures import (
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    GridSpec,
    atomize,
    discretize,
    permute_axes,
)
from utils.config_utils import FixtureSpec
from utils.logger import logger

GAUSSIAN_TARGET_COVARIANCE = ((2.0, 1.0), (1.0, 2.0))


@dataclass(frozen=True, eq=False)
class Instance:
    """
    Пара мер для эксперимента

    Дискретные атомы есть всегда; сеточные плотности и гауссианы - если
    фикстура из них построена.
    """
    name: str
    source: DiscreteMeasure
    target: DiscreteMeasure
    source_density: Optional[GridDensity] = None
    target_density: Optional[GridDensity] = None
    source_gaussian: Optional[GaussianMeasure] = None
    target_gaussian: Optional[GaussianMeasure] = None
    closed_form: bool = False

    @property
    def dimension(self) -> int:
        return self.source.dimension

    @property
    def has_gaussians(self) -> bool:
        return self.source_gaussian is not None and self.target_gaussian is not None

    @property
    def source_grid(self) -> Optional[GridSpec]:
        return None if self.source_density is None else self.source_density.grid

    @property
    def target_grid(self) -> Optional[GridSpec]:
        return None if self.target_density is None else self.target_density.grid

    def descriptor(self) -> Dict[str, Any]:
        """Описание для отчёта"""
        info: Dict[str, Any] = {
            "name": self.name,
            "dimension": self.dimension,
            "source_atoms": self.source.size,
            "target_atoms": self.target.size,
            "closed_form": self.closed_form,
        }
        if self.source_grid is not None:
            info["source_grid"] = list(self.source_grid.shape)
            info["target_grid"] = list(self.target_grid.shape)
        if self.has_gaussians:
            info["source_gaussian"] = {
                "mean": self.source_gaussian.mean.tolist(),
                "covariance": self.source_gaussian.covariance.tolist(),
            }
            info["target_gaussian"] = {
                "mean": self.target_gaussian.mean.tolist(),
                "covariance": self.target_gaussian.covariance.tolist(),
            }
        return info


def gaussian_grid(gaussian: GaussianMeasure, nodes: int, radius: float = 5.0) -> GridSpec:
    """Сетка mean ± radius·σ по каждой оси"""
    lows = gaussian.mean - radius * gaussian.std
    highs = gaussian.mean + radius * gaussian.std
    return GridSpec.uniform(lows, highs, nodes)


def gaussian_instance(
    source: GaussianMeasure,
    target: GaussianMeasure,
    nodes: int = 16,
    radius: float = 5.0,
    *,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    closed_form: bool = True,
    name: str = "gaussian",
) -> Instance:
    """
    Гауссова пара, дискретизированная на сетках

    Сетка каждой меры масштабирована её стандартными отклонениями, поэтому
    для гауссиан, отличающихся масштабом по оси 0, маргиналы этой оси
    совпадают узел в узел.
    """
    if source.dimension != target.dimension:
        raise MeasureError("dimension mismatch")
    source_density = discretize(source, gaussian_grid(source, nodes, radius))
    target_density = discretize(target, gaussian_grid(target, nodes, radius))
    if samples is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        source_atoms = DiscreteMeasure.normalized(source.sample(samples, rng))
        target_atoms = DiscreteMeasure.normalized(target.sample(samples, rng))
    else:
        source_atoms = atomize(source_density)
        target_atoms = atomize(target_density)
    return Instance(
        name=name,
        source=source_atoms,
        target=target_atoms,
        source_density=source_density,
        target_density=target_density,
        source_gaussian=source,
        target_gaussian=target,
        closed_form=closed_form,
    )


def gaussian_fixture(nodes: int = 16, radius: float = 5.0, closed_form: bool = True) -> Instance:
    """N(0, I₂) → N(0, [[2, 1], [1, 2]])"""
    source = GaussianMeasure(np.zeros(2), np.eye(2))
    target = GaussianMeasure(np.zeros(2), np.array(GAUSSIAN_TARGET_COVARIANCE))
    return gaussian_instance(source, target, nodes, radius, closed_form=closed_form)


def two_atom_fixture() -> Instance:
    """½δ₀ + ½δ₁ → ½δ₂ + ½δ₃"""
    return Instance(
        name="two-atom",
        source=DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.5])),
        target=DiscreteMeasure(np.array([[2.0], [3.0]]), np.array([0.5, 0.5])),
    )


def grid_instance(source: GridDensity, target: GridDensity, name: str = "grid") -> Instance:
    return Instance(name, atomize(source), atomize(target), source_density=source, target_density=target)


def atoms_instance(source: DiscreteMeasure, target: DiscreteMeasure, name: str = "atoms") -> Instance:
    return Instance(name, source, target)


def identical_instance(instance: Instance) -> Instance:
    """Та же мера в роли источника и цели"""
    return replace(
        instance,
        name=f"{instance.name}-identical",
        target=instance.source,
        target_density=instance.source_density,
        target_gaussian=instance.source_gaussian,
    )


def apply_ordering(instance: Instance, order: Sequence[int]) -> Instance:
    """Переставить координаты обеих мер (порядок переменных KR)"""
    permuted = {
        key: None if getattr(instance, key) is None else permute_axes(getattr(instance, key), order)
        for key in ("source", "target", "source_density", "target_density", "source_gaussian", "target_gaussian")
    }
    logger.info(f"Порядок переменных: {list(order)}")
    return replace(instance, name=f"{instance.name}-ordered", **permuted)


def build_fixture(fixture: FixtureSpec, seed: int = 0) -> Instance:
    """Построить фикстуру из раздела fixture конфигурации"""
    if fixture.kind == "gaussian":
        source = GaussianMeasure(np.array(fixture.source["mean"], dtype=float), np.array(fixture.source["covariance"], dtype=float))
        target = GaussianMeasure(np.array(fixture.target["mean"], dtype=float), np.array(fixture.target["covariance"], dtype=float))
        return gaussian_instance(
            source, target, fixture.nodes, fixture.radius,
            samples=fixture.samples,
            rng=np.random.default_rng(seed),
            closed_form=fixture.closed_form,
        )
    source = MeasureRepository.load(fixture.source)
    target = MeasureRepository.load(fixture.target)
    if fixture.kind == "grid_density":
        if not isinstance(source, GridDensity) or not isinstance(target, GridDensity):
            raise MeasureError("grid_density fixture needs grid density files")
        return grid_instance(source, target)
    if not isinstance(source, DiscreteMeasure):
        source = atomize(source)
    if not isinstance(target, DiscreteMeasure):
        target = atomize(target)
    return atoms_instance(source, target)
