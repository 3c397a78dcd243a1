"""MiniManip: a deterministic language-conditioned tabletop gridworld.

The table is the unit square, viewed by two orthographic cameras: a
fixed third-person camera over the whole table and a gripper-centered
camera with a half-meter window. Both render RGB (object color over the
palette's table color) and depth (camera plane distance minus the top
height at each pixel). Scenes hold colored blocks, buttons, a rail-bound
slider, and a bin; five task families (lift, push, press, place, slide)
come with scripted experts, a paraphrase bank, and 5-task chain
evaluation. Everything is a pure function of (seed, palette, actions).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ContractError, ParaphraseBankError, TaskError

Array = np.ndarray

# --- geometry ---------------------------------------------------------------

TABLE_LO, TABLE_HI = 0.0, 1.0
BLOCK_CLAMP_MARGIN = 0.03  # pushed blocks keep this margin to the table edge
Z_MAX = 0.35               # gripper height ceiling
Z_CAM = 1.0                # camera plane height; depth = Z_CAM - top height
STEP_CLIP = 0.1            # per-step |delta| bound, meters and radians
HOVER_Z = 0.22             # expert transit height, above every object
EXPERT_STEP = 0.08         # expert per-step magnitude, inside the clip bound

GRASP_RADIUS = 0.08
GRASP_Z_TOL = 0.04
CONTACT_RADIUS = 0.085     # low gripper drags blocks/slider within this radius
CONTACT_Z_PAD = 0.04
BUTTON_RADIUS = 0.07
BUTTON_PRESS_Z = 0.065
LIFT_SUCCESS_Z = 0.18
PUSH_SUCCESS_DIST = 0.12
PLACE_RADIUS = 0.09
SLIDE_END_TOL = 0.03

BLOCK_HALF = 0.075
BLOCK_HEIGHT = 0.10
TALL_HEIGHT = 0.15
SHORT_HEIGHT = 0.05
BUTTON_HALF = 0.05
BUTTON_HEIGHT = 0.04
BUTTON_PRESSED_HEIGHT = 0.015
SLIDER_HALF = 0.05
SLIDER_HEIGHT = 0.06
BIN_HALF = 0.09
BIN_HEIGHT = 0.02
GRIPPER_HALF = 0.03

IMAGE_HW = 32
GRIPPER_CAM_WINDOW = 0.8   # wide-angle wrist view; target visible almost always

FAMILIES = ("lift", "push", "press", "place", "slide")

# --- colors and palettes ----------------------------------------------------

COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.90, 0.12, 0.10),
    "green": (0.10, 0.75, 0.18),
    "blue": (0.12, 0.25, 0.90),
    "yellow": (0.92, 0.86, 0.12),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.60, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.80),
}

BIN_COLOR = (0.18, 0.18, 0.18)
RAIL_COLOR = (0.32, 0.28, 0.24)
GRIPPER_OPEN_COLOR = (0.04, 0.04, 0.04)
GRIPPER_CLOSED_COLOR = (0.46, 0.46, 0.46)


@dataclass(frozen=True)
class Palette:
    table_color: tuple[float, float, float]
    object_colors: tuple[str, ...]


# The four environment splits share a core color set; the extras of split D
# all occur in A-C, so D differs by table color and color combinations only.
PALETTES: dict[str, Palette] = {
    "A": Palette((0.72, 0.72, 0.72), ("red", "green", "blue", "yellow", "orange", "purple")),
    "B": Palette((0.78, 0.72, 0.62), ("red", "green", "blue", "yellow", "purple", "cyan")),
    "C": Palette((0.64, 0.70, 0.78), ("red", "green", "blue", "yellow", "cyan", "orange")),
    "D": Palette((0.68, 0.76, 0.66), ("red", "green", "blue", "yellow", "orange", "purple", "cyan")),
}

_PALETTE_INDEX = {"A": 0, "B": 1, "C": 2, "D": 3}

# SeedSequence spawn keys, so the independent random streams never collide.
_GEOM_KEY, _COLOR_KEY, _TASK_KEY, _CHAIN_KEY, _PARA_KEY = 0, 1, 2, 3, 4


# --- world ------------------------------------------------------------------


@dataclass
class Obj:
    kind: str                    # block | button | slider | bin
    color: str                   # key into COLORS, or "" for bin
    pos: Array                   # (x, y) center, meters
    height: float
    held: bool = False
    pressed: bool = False
    rail: tuple[float, float] | None = None   # slider x-range

    def copy(self) -> "Obj":
        return Obj(self.kind, self.color, self.pos.copy(), self.height,
                   self.held, self.pressed, self.rail)


@dataclass
class WorldState:
    gripper_pos: Array           # (x, y, z)
    gripper_open: bool
    objects: list[Obj]
    palette: str
    # Per-scene draws from the palette's texture distribution; None falls
    # back to the palette base values. Read-only once sampled.
    table_color: tuple[float, float, float] | None = None
    scene_colors: dict[str, tuple[float, float, float]] | None = None

    def copy(self) -> "WorldState":
        return WorldState(self.gripper_pos.copy(), self.gripper_open,
                          [o.copy() for o in self.objects], self.palette,
                          self.table_color, self.scene_colors)

    def held_object(self) -> Obj | None:
        for o in self.objects:
            if o.held:
                return o
        return None

    def validate(self) -> None:
        held = sum(o.held for o in self.objects)
        if held > 1:
            raise ContractError(f"{held} objects held at once")
        for o in self.objects:
            if not (TABLE_LO <= o.pos[0] <= TABLE_HI and TABLE_LO <= o.pos[1] <= TABLE_HI):
                raise ContractError(f"object out of bounds at {o.pos}")
        g = self.gripper_pos
        if not (TABLE_LO <= g[0] <= TABLE_HI and TABLE_LO <= g[1] <= TABLE_HI
                and 0.0 <= g[2] <= Z_MAX):
            raise ContractError(f"gripper out of bounds at {g}")


@dataclass(frozen=True)
class TaskSpec:
    family: str
    color: str
    size: str | None             # None | "tall" | "short"
    instruction: str
    x0: float | None = None      # push: target x at task start


@dataclass(frozen=True)
class ChainSpec:
    tasks: tuple[TaskSpec, ...]
    seed: int
    palette: str
    variant: str = "standard"

    def __post_init__(self):
        if len(self.tasks) != 5:
            raise ContractError(f"a chain holds exactly 5 tasks, got {len(self.tasks)}")


@dataclass
class Observation:
    """Two RGB frames in [0,1] and two depth frames in meters, float32."""

    rgb_static: Array
    rgb_gripper: Array
    depth_static: Array
    depth_gripper: Array


@dataclass
class Action:
    pose: Array                  # (dx, dy, dz, droll, dpitch, dyaw)
    gripper_closed: bool

    @staticmethod
    def zero(closed: bool = False) -> "Action":
        return Action(np.zeros(6), closed)


@dataclass
class Trajectory:
    instruction: str
    family: str
    palette: str
    seed: int
    steps: list[tuple[Observation, Action]]
    variant: str = "standard"


@dataclass
class ChainResult:
    successes: list[bool]
    seed: int
    palette: str
    chain_id: int | None = None


# --- scene construction -----------------------------------------------------


def _grid_cells() -> list[tuple[float, float]]:
    centers = np.linspace(0.17, 0.83, 5)
    return [(float(x), float(y)) for y in centers for x in centers]


def make_env(seed: int, palette: str, variant: str = "standard") -> WorldState:
    """Deterministic initial scene. Geometry depends only on the seed;
    colors additionally depend on the palette, so splits share layouts."""
    if palette not in PALETTES:
        raise ContractError(f"unknown palette {palette!r}; expected one of A-D")
    if variant not in ("standard", "tall_short"):
        raise ContractError(f"unknown scene variant {variant!r}")
    pal = PALETTES[palette]
    geom = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_GEOM_KEY,)))
    colr = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_COLOR_KEY, _PALETTE_INDEX[palette]))
    )

    centers = np.linspace(0.17, 0.83, 5)
    rail_row = float(centers[geom.integers(0, 5)])
    rail = (0.25, 0.70)
    cells = [c for c in _grid_cells()
             if not (abs(c[1] - rail_row) < 1e-9 and rail[0] - 0.09 <= c[0] <= rail[1] + 0.09)]
    order = geom.permutation(len(cells))

    names = list(pal.object_colors)
    block_colors = [names[i] for i in colr.permutation(len(names))[:5]]
    button_colors = [names[i] for i in colr.permutation(len(names))[:2]]
    slider_color = names[int(colr.integers(0, len(names)))]

    objects: list[Obj] = []
    take = iter(order)

    if variant == "tall_short":
        pair_color = block_colors[0]
        heights = [TALL_HEIGHT, SHORT_HEIGHT]
        if geom.random() < 0.5:
            heights.reverse()
        for h in heights:
            cx, cy = cells[next(take)]
            objects.append(Obj("block", pair_color, np.array([cx, cy]), h))
        for color in block_colors[1:4]:
            cx, cy = cells[next(take)]
            objects.append(Obj("block", color, np.array([cx, cy]), BLOCK_HEIGHT))
    else:
        for color in block_colors:
            cx, cy = cells[next(take)]
            objects.append(Obj("block", color, np.array([cx, cy]), BLOCK_HEIGHT))

    for color in button_colors:
        cx, cy = cells[next(take)]
        objects.append(Obj("button", color, np.array([cx, cy]), BUTTON_HEIGHT))

    slider_x0 = rail[0] + 0.03
    objects.append(Obj("slider", slider_color, np.array([slider_x0, rail_row]),
                       SLIDER_HEIGHT, rail=rail))
    cx, cy = cells[next(take)]
    objects.append(Obj("bin", "", np.array([cx, cy]), BIN_HEIGHT))

    gx, gy = geom.uniform(0.2, 0.8, size=2)

    def jitter(rgb, spread):
        return tuple(float(np.clip(c + colr.uniform(-spread, spread), 0.0, 1.0))
                     for c in rgb)

    table_color = jitter(pal.table_color, 0.03)
    scene_colors = {name: jitter(COLORS[name], 0.02) for name in pal.object_colors}

    state = WorldState(np.array([gx, gy, HOVER_Z]), True, objects, palette,
                       table_color, scene_colors)
    state.validate()
    return state


# --- dynamics ---------------------------------------------------------------


def _grasp_z(block: Obj) -> float:
    return max(block.height - 0.02, 0.01)


def step_env(state: WorldState, action: Action) -> WorldState:
    """One deterministic physics step; out-of-bounds motion clamps."""
    s = state.copy()
    delta = np.clip(np.asarray(action.pose[:3], dtype=np.float64), -STEP_CLIP, STEP_CLIP)
    old = s.gripper_pos.copy()
    new = old + delta
    new[0] = np.clip(new[0], TABLE_LO, TABLE_HI)
    new[1] = np.clip(new[1], TABLE_LO, TABLE_HI)
    new[2] = np.clip(new[2], 0.0, Z_MAX)
    s.gripper_pos = new
    dxy = new[:2] - old[:2]

    held = s.held_object()
    if held is not None:
        held.pos = new[:2].copy()
    elif dxy[0] != 0.0 or dxy[1] != 0.0:
        # Low gripper drags nearby blocks and the slider.
        for obj in s.objects:
            if obj.kind not in ("block", "slider"):
                continue
            if np.linalg.norm(new[:2] - obj.pos) > CONTACT_RADIUS:
                continue
            if new[2] > obj.height + CONTACT_Z_PAD:
                continue
            if obj.kind == "slider":
                obj.pos[0] = float(np.clip(obj.pos[0] + dxy[0], obj.rail[0], obj.rail[1]))
            else:
                obj.pos = np.clip(obj.pos + dxy, BLOCK_CLAMP_MARGIN,
                                  TABLE_HI - BLOCK_CLAMP_MARGIN)

    if action.gripper_closed and s.gripper_open:
        s.gripper_open = False
        best, best_d = None, np.inf
        for obj in s.objects:
            if obj.kind != "block":
                continue
            d = float(np.linalg.norm(new[:2] - obj.pos))
            if d <= GRASP_RADIUS and abs(new[2] - _grasp_z(obj)) <= GRASP_Z_TOL and d < best_d:
                best, best_d = obj, d
        if best is not None:
            best.held = True
            best.pos = new[:2].copy()
    elif not action.gripper_closed and not s.gripper_open:
        s.gripper_open = True
        for obj in s.objects:
            if obj.held:
                obj.held = False
                obj.pos = new[:2].copy()

    for obj in s.objects:
        if obj.kind == "button" and not obj.pressed:
            if (np.linalg.norm(new[:2] - obj.pos) <= BUTTON_RADIUS
                    and new[2] <= BUTTON_PRESS_Z):
                obj.pressed = True
                obj.height = BUTTON_PRESSED_HEIGHT
    return s


# --- rendering --------------------------------------------------------------


def _effective_height(obj: Obj, state: WorldState) -> float:
    return float(state.gripper_pos[2]) if obj.held else obj.height


def _paint(state: WorldState, cx: float, cy: float, window: float, res: int):
    table = state.table_color or PALETTES[state.palette].table_color
    tints = state.scene_colors or COLORS
    xs = cx - window / 2 + (np.arange(res) + 0.5) * window / res
    ys = cy - window / 2 + (np.arange(res) + 0.5) * window / res
    gx, gy = np.meshgrid(xs, ys)

    color = np.empty((res, res, 3))
    color[:] = table
    height = np.zeros((res, res))

    def stamp(px, py, half_x, half_y, h, rgb):
        mask = (np.abs(gx - px) <= half_x) & (np.abs(gy - py) <= half_y) & (h > height)
        color[mask] = rgb
        height[mask] = h

    for obj in state.objects:
        if obj.kind == "slider":
            rx0, rx1 = obj.rail
            stamp((rx0 + rx1) / 2, obj.pos[1], (rx1 - rx0) / 2 + SLIDER_HALF, 0.015,
                  0.005, RAIL_COLOR)
    for obj in state.objects:
        h = _effective_height(obj, state)
        if obj.kind == "block":
            stamp(obj.pos[0], obj.pos[1], BLOCK_HALF, BLOCK_HALF, h, tints[obj.color])
        elif obj.kind == "button":
            # Buttons are pastel so saturated colors belong to blocks only.
            rgb = 0.45 * np.array(tints[obj.color]) + 0.55
            if obj.pressed:
                rgb = rgb * 0.55
            stamp(obj.pos[0], obj.pos[1], BUTTON_HALF, BUTTON_HALF, h, tuple(rgb))
        elif obj.kind == "slider":
            rgb = 0.55 * np.array(tints[obj.color])  # shaded handle
            stamp(obj.pos[0], obj.pos[1], SLIDER_HALF, SLIDER_HALF, h, tuple(rgb))
        elif obj.kind == "bin":
            stamp(obj.pos[0], obj.pos[1], BIN_HALF, BIN_HALF, h, BIN_COLOR)

    # The arm enters from above, so the gripper marker occludes everything.
    g = state.gripper_pos
    marker = (np.abs(gx - g[0]) <= GRIPPER_HALF) & (np.abs(gy - g[1]) <= GRIPPER_HALF)
    color[marker] = GRIPPER_OPEN_COLOR if state.gripper_open else GRIPPER_CLOSED_COLOR
    height[marker] = g[2]

    depth = Z_CAM - height
    return color.astype(np.float32), depth.astype(np.float32)


def render_observation(state: WorldState) -> Observation:
    """Orthographic third-person view plus a gripper-centered zoom."""
    rgb_s, depth_s = _paint(state, 0.5, 0.5, 1.0, IMAGE_HW)
    g = state.gripper_pos
    rgb_g, depth_g = _paint(state, float(g[0]), float(g[1]), GRIPPER_CAM_WINDOW, IMAGE_HW)
    return Observation(rgb_s, rgb_g, depth_s, depth_g)


# --- tasks ------------------------------------------------------------------


def _size_of(block: Obj) -> str | None:
    if block.height >= 0.12:
        return "tall"
    if block.height <= 0.07:
        return "short"
    return None


def resolve_target(state: WorldState, task: TaskSpec) -> Obj:
    kind = {"lift": "block", "push": "block", "place": "block",
            "press": "button", "slide": "slider"}[task.family]
    matches = []
    for obj in state.objects:
        if obj.kind != kind:
            continue
        if task.color and obj.color != task.color:
            continue
        if task.size is not None and _size_of(obj) != task.size:
            continue
        matches.append(obj)
    if not matches:
        raise TaskError(
            f"no {kind} matches descriptor color={task.color!r} size={task.size!r}"
        )
    g = state.gripper_pos[:2]
    return min(matches, key=lambda o: float(np.linalg.norm(g - o.pos)))


def _find_bin(state: WorldState) -> Obj:
    for obj in state.objects:
        if obj.kind == "bin":
            return obj
    raise TaskError("scene has no bin")


def _canonical_instruction(family: str, color: str, size: str | None) -> str:
    qual = f"{size} {color}" if size else color
    return {
        "lift": f"lift the {qual} block",
        "push": f"push the {qual} block right",
        "press": f"press the {qual} button",
        "place": f"put the {qual} block in the bin",
        "slide": f"slide the {qual} slider right",
    }[family]


def make_task(state: WorldState, family: str, target: Obj) -> TaskSpec:
    """Instantiate a task against a live scene, snapshotting what the
    success predicate needs."""
    size = _size_of(target) if family == "lift" and _is_ambiguous(state, target) else None
    x0 = float(target.pos[0]) if family == "push" else None
    return TaskSpec(family, target.color, size,
                    _canonical_instruction(family, target.color, size), x0)


def _is_ambiguous(state: WorldState, block: Obj) -> bool:
    same = [o for o in state.objects if o.kind == "block" and o.color == block.color]
    return len(same) > 1


def success(state: WorldState, task: TaskSpec) -> bool:
    """The task predicate, evaluated against the live state."""
    target = resolve_target(state, task)
    if task.family == "lift":
        return target.held and state.gripper_pos[2] >= LIFT_SUCCESS_Z
    if task.family == "push":
        if task.x0 is None:
            raise ContractError("push task missing its start snapshot")
        return float(target.pos[0]) - task.x0 >= PUSH_SUCCESS_DIST
    if task.family == "press":
        return target.pressed
    if task.family == "place":
        return (not target.held
                and float(np.linalg.norm(target.pos - _find_bin(state).pos)) <= PLACE_RADIUS)
    if task.family == "slide":
        return float(target.pos[0]) >= target.rail[1] - SLIDE_END_TOL
    raise TaskError(f"unknown family {task.family!r}")


def sample_task(state: WorldState, rng: np.random.Generator,
                families: Sequence[str] | None = None) -> TaskSpec:
    """Pick a random feasible task against the scene."""
    fams = list(families) if families else list(FAMILIES)
    for f in fams:
        if f not in FAMILIES:
            raise TaskError(f"unknown task family {f!r}")
    family = fams[int(rng.integers(0, len(fams)))]
    kind = {"lift": "block", "push": "block", "place": "block",
            "press": "button", "slide": "slider"}[family]
    candidates = [o for o in state.objects if o.kind == kind]
    if not candidates:
        raise TaskError(f"scene has no {kind} for family {family!r}")
    target = candidates[int(rng.integers(0, len(candidates)))]
    return make_task(state, family, target)


# --- paraphrase bank ---------------------------------------------------------

# Ten-plus templates per family; "{t}" is the (size-qualified) color phrase.
# The canonical instruction is always entry zero.
PARAPHRASE_BANK: dict[str, tuple[str, ...]] = {
    "lift": (
        "lift the {t} block",
        "pick up the {t} block",
        "raise the {t} block",
        "grab and hold the {t} block",
        "hoist the {t} block",
        "take the {t} block up",
        "elevate the {t} block",
        "grab the {t} block and raise it",
        "pick the {t} block up",
        "lift up the {t} block",
        "bring the {t} block up",
    ),
    "push": (
        "push the {t} block right",
        "shove the {t} block right",
        "nudge the {t} block to the right",
        "push the {t} block to the right",
        "slide the {t} block right",
        "move the {t} block right",
        "drag the {t} block to the right",
        "push the {t} block rightward",
        "shift the {t} block right",
        "scoot the {t} block to the right",
    ),
    "press": (
        "press the {t} button",
        "push the {t} button",
        "tap the {t} button",
        "hit the {t} button",
        "press down the {t} button",
        "poke the {t} button",
        "push down on the {t} button",
        "depress the {t} button",
        "tap on the {t} button",
        "press on the {t} button",
    ),
    "place": (
        "put the {t} block in the bin",
        "place the {t} block in the bin",
        "drop the {t} block in the bin",
        "move the {t} block into the bin",
        "put the {t} block into the bin",
        "set the {t} block in the bin",
        "carry the {t} block to the bin",
        "place the {t} block into the bin",
        "drop the {t} block into the bin",
        "bring the {t} block to the bin",
    ),
    "slide": (
        "slide the {t} slider right",
        "push the {t} slider right",
        "move the {t} slider right",
        "drag the {t} slider to the right",
        "slide the {t} slider to the right",
        "shift the {t} slider right",
        "push the {t} slider to the right end",
        "move the {t} slider to the right end",
        "scoot the {t} slider right",
        "slide the {t} slider rightward",
    ),
}


def paraphrase_instruction(task: TaskSpec, rng: np.random.Generator) -> str:
    """Uniform draw from the task family's paraphrase bank."""
    bank = PARAPHRASE_BANK.get(task.family)
    if not bank:
        raise ParaphraseBankError(f"no paraphrases for family {task.family!r}")
    qual = f"{task.size} {task.color}" if task.size else task.color
    template = bank[int(rng.integers(0, len(bank)))]
    return template.format(t=qual)


def vocabulary_words() -> list[str]:
    """Closed word set of all instruction templates plus color/size terms."""
    words: set[str] = set()
    for bank in PARAPHRASE_BANK.values():
        for template in bank:
            for w in template.replace("{t}", "").split():
                words.add(w.lower())
    words.update(COLORS)
    words.update(("tall", "short"))
    return sorted(words)


# --- scripted experts --------------------------------------------------------


def _goto(state: WorldState, point, closed: bool) -> Action:
    delta = np.asarray(point, dtype=np.float64) - state.gripper_pos
    pose = np.zeros(6)
    pose[:3] = np.clip(delta, -EXPERT_STEP, EXPERT_STEP)
    return Action(pose, closed)


def expert_action(state: WorldState, task: TaskSpec) -> Action:
    """Waypoint controller that completes any resolvable task in <= 64 steps."""
    target = resolve_target(state, task)
    g = state.gripper_pos
    held = state.held_object()
    family = task.family

    needs_grasp = family in ("lift", "place")
    if held is not None and (not needs_grasp or held is not target):
        return Action.zero(closed=False)  # release whatever we carry

    if family == "lift":
        if target.held:
            return _goto(state, (target.pos[0], target.pos[1], HOVER_Z + 0.02), True)
        return _approach_and_grasp(state, target)

    if family == "place":
        if not target.held:
            return _approach_and_grasp(state, target)
        dst = _find_bin(state)
        if np.linalg.norm(g[:2] - dst.pos) > 0.03:
            return _goto(state, (dst.pos[0], dst.pos[1], HOVER_Z), True)
        return Action.zero(closed=False)  # release over the bin

    if family == "press":
        if np.linalg.norm(g[:2] - target.pos) > 0.02:
            return _goto(state, (target.pos[0], target.pos[1], HOVER_Z), False)
        return _goto(state, (target.pos[0], target.pos[1], 0.03), False)

    if family in ("push", "slide"):
        push_z = 0.05
        behind = (g[2] <= push_z + 0.015
                  and g[0] < target.pos[0]
                  and abs(g[1] - target.pos[1]) <= 0.025
                  and target.pos[0] - g[0] <= CONTACT_RADIUS + 0.05)
        if behind:
            return _goto(state, (g[0] + 0.06, target.pos[1], push_z), False)
        ax = target.pos[0] - CONTACT_RADIUS - 0.025
        if np.linalg.norm(g[:2] - np.array([ax, target.pos[1]])) > 0.02:
            return _goto(state, (ax, target.pos[1], HOVER_Z), False)
        return _goto(state, (ax, target.pos[1], push_z), False)

    raise TaskError(f"unknown family {family!r}")


def _approach_and_grasp(state: WorldState, target: Obj) -> Action:
    g = state.gripper_pos
    gz = _grasp_z(target)
    if np.linalg.norm(g[:2] - target.pos) > 0.025:
        return _goto(state, (target.pos[0], target.pos[1], HOVER_Z), False)
    if abs(g[2] - gz) > 0.02:
        return _goto(state, (target.pos[0], target.pos[1], gz), False)
    return Action.zero(closed=True)  # grab


def run_expert_episode(state: WorldState, task: TaskSpec, max_steps: int = 64,
                       record: bool = False):
    """Roll the expert until the task predicate fires.

    Returns (final_state, steps) where steps is a list of
    (Observation, Action) when record=True, else a bare count.
    """
    steps: list[tuple[Observation, Action]] = []
    n = 0
    for _ in range(max_steps):
        action = expert_action(state, task)
        if record:
            steps.append((render_observation(state), action))
        state = step_env(state, action)
        n += 1
        if success(state, task):
            return state, (steps if record else n)
    raise TaskError(
        f"expert failed {task.family!r} on {task.color!r} within {max_steps} steps"
    )


# --- dataset generation -------------------------------------------------------


def generate_dataset(n: int, seed: int, palettes: Sequence[str],
                     families: Sequence[str] | None = None,
                     variant: str = "standard",
                     enrich: bool = False) -> list[Trajectory]:
    """n expert demonstrations, cycling over the requested palettes."""
    if n < 1:
        raise ContractError("dataset size must be >= 1")
    if not palettes:
        raise ContractError("at least one palette is required")
    out: list[Trajectory] = []
    for i in range(n):
        palette = palettes[i % len(palettes)]
        env_seed = seed + i
        state = make_env(env_seed, palette, variant)
        rng = np.random.default_rng(np.random.SeedSequence(env_seed, spawn_key=(_TASK_KEY,)))
        task = sample_task(state, rng, families)
        text = paraphrase_instruction(task, rng) if enrich else task.instruction
        _, steps = run_expert_episode(state, task, record=True)
        out.append(Trajectory(text, task.family, palette, env_seed, steps, variant))
    return out


# --- chains -------------------------------------------------------------------


def sample_chain(seed: int, palette: str, families: Sequence[str] | None = None,
                 variant: str = "standard") -> ChainSpec:
    """Five compatible tasks over the scene that make_env(seed, palette) builds.

    Targets are distinct objects; the tall_short variant leads with the
    two size-qualified lifts of the same-color pair.
    """
    state = make_env(seed, palette, variant)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_CHAIN_KEY,)))
    blocks = [o for o in state.objects if o.kind == "block"]
    buttons = [o for o in state.objects if o.kind == "button"]
    slider = [o for o in state.objects if o.kind == "slider"]

    tasks: list[TaskSpec] = []
    if variant == "tall_short":
        pair = [b for b in blocks if _is_ambiguous(state, b)]
        rest = [b for b in blocks if not _is_ambiguous(state, b)]
        if rng.random() < 0.5:
            pair.reverse()
        for b in pair:
            tasks.append(make_task(state, "lift", b))
        order = rng.permutation(len(rest))
        for i in order[:3]:
            tasks.append(make_task(state, "lift", rest[i]))
        return ChainSpec(tuple(tasks), seed, palette, variant)

    fams = list(families) if families else list(FAMILIES)
    pools: dict[str, list[Obj]] = {
        "lift": list(blocks), "push": list(blocks), "place": list(blocks),
        "press": list(buttons), "slide": list(slider),
    }
    used: set[int] = set()
    for _ in range(5):
        feasible = [f for f in fams
                    if any(id(o) not in used for o in pools[f])]
        if not feasible:
            raise TaskError(f"cannot build a 5-task chain from families {fams}")
        family = feasible[int(rng.integers(0, len(feasible)))]
        cands = [o for o in pools[family] if id(o) not in used]
        target = cands[int(rng.integers(0, len(cands)))]
        used.add(id(target))
        tasks.append(make_task(state, family, target))
    return ChainSpec(tuple(tasks), seed, palette, variant)


class ExpertAgent:
    """Privileged oracle agent: acts from the world state, not pixels."""

    def __init__(self):
        self._task: TaskSpec | None = None

    def reset(self):
        self._task = None

    def begin_task(self, task: TaskSpec, instruction: str):
        self._task = task

    def act(self, obs: Observation, instruction: str,
            state: WorldState | None = None) -> Action:
        if state is None or self._task is None:
            raise ContractError("expert agent needs the world state and a task")
        return expert_action(state, self._task)


class RandomAgent:
    """Uniform random actions inside the clip bound; the no-skill baseline."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def reset(self):
        pass

    def begin_task(self, task: TaskSpec, instruction: str):
        pass

    def act(self, obs, instruction, state=None) -> Action:
        pose = np.zeros(6)
        pose[:3] = self._rng.uniform(-STEP_CLIP, STEP_CLIP, size=3)
        return Action(pose, bool(self._rng.random() < 0.5))


def rollout_chain(agent, chain: ChainSpec, max_steps_per_task: int = 64,
                  enrich: bool = False) -> ChainResult:
    """Execute the 5 tasks in order; task i runs only if 1..i-1 succeeded."""
    state = make_env(chain.seed, chain.palette, chain.variant)
    agent.reset()
    para_rng = np.random.default_rng(np.random.SeedSequence(chain.seed, spawn_key=(_PARA_KEY,)))
    successes: list[bool] = []
    alive = True
    for template in chain.tasks:
        if not alive:
            successes.append(False)
            continue
        target = resolve_target(state, template)
        task = replace(template, x0=float(target.pos[0]))
        text = paraphrase_instruction(task, para_rng) if enrich else task.instruction
        if hasattr(agent, "begin_task"):
            agent.begin_task(task, text)
        ok = False
        for _ in range(max_steps_per_task):
            obs = render_observation(state)
            action = agent.act(obs, text, state=state)
            state = step_env(state, action)
            if success(state, task):
                ok = True
                break
        successes.append(ok)
        alive = ok
    return ChainResult(successes, chain.seed, chain.palette)
