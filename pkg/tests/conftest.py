import numpy as np
import pytest

from egosearch.geometry import Box
from egosearch.scene import (
    Cabinet,
    Scene,
    SceneParams,
    TargetObject,
    generate_scene,
)


def empty_room(size: float = 10.0, target=(3.0, 3.0, 0.2), target_radius: float = 0.2) -> Scene:
    params = SceneParams(width=size, depth=size, furniture_range=(0, 0), cabinet_range=(0, 0))
    scene = generate_scene(seed=1, params=params)
    return scene.with_target(TargetObject(position=target, radius=target_radius))


def boxless_scene(target=(100.0, 0.0, 0.2)) -> Scene:
    """No geometry at all: every ray escapes to max depth."""
    return Scene(
        bounds=(-50.0, -50.0, 50.0, 50.0),
        walls=[],
        furniture=[],
        cabinets=[],
        target=TargetObject(position=target, radius=0.2),
    )


def single_wall_scene(wall_x: float = 2.0, target=(100.0, 0.0, 0.2)) -> Scene:
    """One wall plane-ish box perpendicular to +x, very wide and tall."""
    wall = Box(center=(wall_x + 0.5, 0.0, 25.0), half_extents=(0.5, 200.0, 25.0))
    return Scene(
        bounds=(-300.0, -300.0, 300.0, 300.0),
        walls=[wall],
        furniture=[],
        cabinets=[],
        target=TargetObject(position=target, radius=0.2),
    )


@pytest.fixture
def furnished_scene() -> Scene:
    return generate_scene(
        seed=3, params=SceneParams(furniture_range=(8, 8), cabinet_range=(2, 2))
    )


@pytest.fixture
def cabinet_scene() -> Scene:
    shell = Box(center=(2.0, 0.0, 0.35), half_extents=(0.4, 0.45, 0.35), yaw=np.pi)
    cab = Cabinet(shell=shell)
    return Scene(
        bounds=(-5.0, -5.0, 5.0, 5.0),
        walls=[],
        furniture=[],
        cabinets=[cab],
        target=TargetObject(position=(2.0, 0.0, 0.25), radius=0.15),
    )
