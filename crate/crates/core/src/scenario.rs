//! Predator-prey pursuit arena. Supplies capture tasks, bid costs (Manhattan
//! distance) and scheduled mid-contract retargeting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::{AgentId, BidSpecification, TaskId, TaskSpec, Tick};

/// Capability every pursuit task asks for.
pub const CHASE: &str = "chase";

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("cell ({x}, {y}) outside {width}x{height} grid")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("grid must be at least 1x1")]
    EmptyGrid,
    #[error("cell ({0}, {1}) already holds a prey")]
    CellTaken(u32, u32),
    #[error("unknown prey {0}")]
    UnknownPrey(String),
    #[error("unknown predator {0}")]
    UnknownPredator(AgentId),
    #[error("{changes} changes requested for only {tasks} tasks")]
    TooManyChanges { changes: usize, tasks: usize },
    #[error("grid has {cells} cells but {needed} agents need distinct starting cells")]
    GridTooSmall { cells: u64, needed: u64 },
    #[error("change window [{earliest}, {latest}] cannot hold {changes} distinct ticks")]
    WindowTooSmall {
        earliest: Tick,
        latest: Tick,
        changes: usize,
    },
    #[error("change ticks must be strictly increasing ({prev} then {next})")]
    UnorderedSchedule { prev: Tick, next: Tick },
    #[error("no change schedule in {draws} draws lands every change on a running contract")]
    NoViableSchedule { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    /// Tie-break order for every movement decision.
    pub const ORDER: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PreyStatus {
    Free,
    Captured { by: AgentId },
    Escaped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prey {
    pub id: String,
    pub cell: Cell,
    pub dangerous: bool,
    pub goal_cell: Option<Cell>,
    pub status: PreyStatus,
}

impl Prey {
    pub fn is_free(&self) -> bool {
        self.status == PreyStatus::Free
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorldEvent {
    Captured { prey: String, by: AgentId },
    Escaped { prey: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: u32,
    height: u32,
    predators: BTreeMap<AgentId, Cell>,
    preys: Vec<Prey>,
    /// Current pursuit target per predator; predators without one stand still.
    targets: BTreeMap<AgentId, String>,
    rng_seed: u64,
}

impl GridWorld {
    pub fn new(width: u32, height: u32, rng_seed: u64) -> Result<Self, ScenarioError> {
        if width == 0 || height == 0 {
            return Err(ScenarioError::EmptyGrid);
        }
        Ok(GridWorld {
            width,
            height,
            predators: BTreeMap::new(),
            preys: Vec::new(),
            targets: BTreeMap::new(),
            rng_seed,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn check(&self, cell: Cell) -> Result<Cell, ScenarioError> {
        if cell.x >= self.width || cell.y >= self.height {
            return Err(ScenarioError::OutOfBounds {
                x: cell.x,
                y: cell.y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(cell)
    }

    pub fn add_predator(&mut self, id: AgentId, cell: Cell) -> Result<(), ScenarioError> {
        self.check(cell)?;
        self.predators.insert(id, cell);
        Ok(())
    }

    pub fn add_prey(
        &mut self,
        id: impl Into<String>,
        cell: Cell,
        dangerous: bool,
        goal_cell: Option<Cell>,
    ) -> Result<(), ScenarioError> {
        self.check(cell)?;
        if let Some(goal) = goal_cell {
            self.check(goal)?;
        }
        if self.preys.iter().any(|p| p.is_free() && p.cell == cell) {
            return Err(ScenarioError::CellTaken(cell.x, cell.y));
        }
        self.preys.push(Prey {
            id: id.into(),
            cell,
            dangerous,
            goal_cell,
            status: PreyStatus::Free,
        });
        Ok(())
    }

    pub fn predators(&self) -> &BTreeMap<AgentId, Cell> {
        &self.predators
    }

    pub fn preys(&self) -> &[Prey] {
        &self.preys
    }

    pub fn prey(&self, id: &str) -> Option<&Prey> {
        self.preys.iter().find(|p| p.id == id)
    }

    fn prey_mut(&mut self, id: &str) -> Option<&mut Prey> {
        self.preys.iter_mut().find(|p| p.id == id)
    }

    pub fn mark_dangerous(&mut self, id: &str) -> Result<(), ScenarioError> {
        let prey = self
            .prey_mut(id)
            .ok_or_else(|| ScenarioError::UnknownPrey(id.to_owned()))?;
        prey.dangerous = true;
        Ok(())
    }

    pub fn set_target(
        &mut self,
        predator: &AgentId,
        prey: Option<&str>,
    ) -> Result<(), ScenarioError> {
        if !self.predators.contains_key(predator) {
            return Err(ScenarioError::UnknownPredator(predator.clone()));
        }
        match prey {
            Some(p) => {
                if self.prey(p).is_none() {
                    return Err(ScenarioError::UnknownPrey(p.to_owned()));
                }
                self.targets.insert(predator.clone(), p.to_owned());
            }
            None => {
                self.targets.remove(predator);
            }
        }
        Ok(())
    }

    pub fn target_of(&self, predator: &AgentId) -> Option<&str> {
        self.targets.get(predator).map(String::as_str)
    }

    pub fn bid_cost(&self, predator_cell: Cell, prey_cell: Cell) -> Result<u32, ScenarioError> {
        Ok(self.check(predator_cell)?.manhattan(self.check(prey_cell)?))
    }

    /// Distance from a predator to a prey's current (or last known) cell.
    pub fn pursuit_cost(&self, predator: &AgentId, prey: &str) -> Result<u32, ScenarioError> {
        let from = *self
            .predators
            .get(predator)
            .ok_or_else(|| ScenarioError::UnknownPredator(predator.clone()))?;
        let to = self
            .prey(prey)
            .ok_or_else(|| ScenarioError::UnknownPrey(prey.to_owned()))?
            .cell;
        self.bid_cost(from, to)
    }

    fn neighbour(&self, cell: Cell, heading: Heading) -> Option<Cell> {
        let (dx, dy) = heading.delta();
        let x = i64::from(cell.x) + dx;
        let y = i64::from(cell.y) + dy;
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return None;
        }
        Some(Cell::new(x as u32, y as u32))
    }

    /// Advances the world by one tick.
    ///
    /// Predators with a free target take one greedy step toward it (first
    /// distance-reducing heading in N, E, S, W order). A predator standing on
    /// its target's cell captures it. Free preys then move one at a time: a
    /// prey with a goal steps toward the goal and escapes on reaching it;
    /// otherwise it picks the neighbouring cell (or staying put, last) that
    /// maximises its distance to the nearest predator.
    pub fn step(&mut self) -> Vec<WorldEvent> {
        let mut events = Vec::new();

        let moves: Vec<(AgentId, Cell)> = self
            .targets
            .iter()
            .filter_map(|(pred, prey_id)| {
                let prey = self.prey(prey_id).filter(|p| p.is_free())?;
                let from = *self.predators.get(pred)?;
                let current = from.manhattan(prey.cell);
                let mut best: Option<(u32, Cell)> = None;
                for h in Heading::ORDER {
                    if let Some(c) = self.neighbour(from, h) {
                        let d = c.manhattan(prey.cell);
                        if d < current && best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, c));
                        }
                    }
                }
                best.map(|(_, c)| (pred.clone(), c))
            })
            .collect();
        for (pred, cell) in moves {
            self.predators.insert(pred, cell);
        }

        let captures: Vec<(String, AgentId)> = self
            .targets
            .iter()
            .filter_map(|(pred, prey_id)| {
                let prey = self.prey(prey_id).filter(|p| p.is_free())?;
                (self.predators.get(pred) == Some(&prey.cell))
                    .then(|| (prey_id.clone(), pred.clone()))
            })
            .collect();
        for (prey_id, by) in captures {
            let prey = self.prey_mut(&prey_id).expect("target exists");
            if prey.is_free() {
                prey.status = PreyStatus::Captured { by: by.clone() };
                events.push(WorldEvent::Captured { prey: prey_id, by });
            }
        }

        let predator_cells: BTreeSet<Cell> = self.predators.values().copied().collect();
        for i in 0..self.preys.len() {
            if !self.preys[i].is_free() {
                continue;
            }
            let here = self.preys[i].cell;
            let blocked = |c: Cell, preys: &[Prey]| {
                predator_cells.contains(&c)
                    || preys
                        .iter()
                        .enumerate()
                        .any(|(j, p)| j != i && p.is_free() && p.cell == c)
            };
            let next = match self.preys[i].goal_cell {
                Some(goal) => {
                    let mut best: Option<(u32, Cell)> = None;
                    for h in Heading::ORDER {
                        if let Some(c) = self.neighbour(here, h) {
                            let d = c.manhattan(goal);
                            if d < here.manhattan(goal)
                                && !blocked(c, &self.preys)
                                && best.is_none_or(|(bd, _)| d < bd)
                            {
                                best = Some((d, c));
                            }
                        }
                    }
                    best.map_or(here, |(_, c)| c)
                }
                None if predator_cells.is_empty() => here,
                None => {
                    let threat = |c: Cell| {
                        predator_cells
                            .iter()
                            .map(|p| p.manhattan(c))
                            .min()
                            .unwrap_or(u32::MAX)
                    };
                    let mut best: Option<(u32, Cell)> = None;
                    let options = Heading::ORDER
                        .iter()
                        .filter_map(|h| self.neighbour(here, *h))
                        .filter(|c| !blocked(*c, &self.preys))
                        .chain(std::iter::once(here));
                    for c in options {
                        let d = threat(c);
                        if best.is_none_or(|(bd, _)| d > bd) {
                            best = Some((d, c));
                        }
                    }
                    best.map_or(here, |(_, c)| c)
                }
            };
            self.preys[i].cell = next;
            if self.preys[i].goal_cell == Some(next) {
                self.preys[i].status = PreyStatus::Escaped;
                events.push(WorldEvent::Escaped {
                    prey: self.preys[i].id.clone(),
                });
            }
        }
        events
    }
}

/// Pure form of [`GridWorld::step`].
pub fn step_world(world: &GridWorld) -> (GridWorld, Vec<WorldEvent>) {
    let mut next = world.clone();
    let events = next.step();
    (next, events)
}

/// Manhattan distance between two in-bounds cells of `world`.
pub fn bid_cost(
    world: &GridWorld,
    predator_cell: Cell,
    prey_cell: Cell,
) -> Result<u32, ScenarioError> {
    world.bid_cost(predator_cell, prey_cell)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeInjection {
    pub tick: Tick,
    pub task_id: TaskId,
    pub new_target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChangeSchedule {
    injections: Vec<ChangeInjection>,
}

impl ChangeSchedule {
    pub fn new(injections: Vec<ChangeInjection>) -> Result<Self, ScenarioError> {
        for w in injections.windows(2) {
            if w[1].tick <= w[0].tick {
                return Err(ScenarioError::UnorderedSchedule {
                    prev: w[0].tick,
                    next: w[1].tick,
                });
            }
        }
        Ok(ChangeSchedule { injections })
    }

    pub fn injections(&self) -> &[ChangeInjection] {
        &self.injections
    }

    pub fn len(&self) -> usize {
        self.injections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }
}

/// Inclusive tick range in which every awarded contract is known to be running.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChangeWindow {
    pub earliest: Tick,
    pub latest: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub tasks: usize,
    pub changes: usize,
    pub contractors: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub window: ChangeWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractorProfile {
    pub id: AgentId,
    pub capabilities: BTreeSet<String>,
}

/// A populated arena ready to be driven by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: GridWorld,
    pub manager: AgentId,
    pub contractors: Vec<ContractorProfile>,
    /// Announced in order at time zero. Expirations are filled in on announcement.
    pub tasks: Vec<TaskSpec>,
    pub schedule: ChangeSchedule,
}

pub fn manager_id() -> AgentId {
    AgentId::new("predator-00")
}

pub fn contractor_id(i: usize) -> AgentId {
    AgentId::new(format!("predator-{i:02}"))
}

pub fn task_id(i: usize) -> TaskId {
    TaskId::new(format!("task-{i:02}"))
}

pub fn prey_id(i: usize) -> String {
    format!("prey-{i:02}")
}

pub fn capture_task(id: TaskId, prey: &str) -> TaskSpec {
    TaskSpec {
        task_id: id,
        name: format!("capture {prey}"),
        abstraction: format!("chase and capture {prey} before it gets away"),
        bid_spec: BidSpecification::requiring([CHASE]),
        expiration: 0,
        target: prey.to_owned(),
        revision: 0,
    }
}

/// Builds the pursuit experiment: one stationary manager predator,
/// `contractors` contractor predators, one prey and capture task per task,
/// one dangerous prey per change, and `changes` injections that retarget
/// distinct tasks onto distinct dangerous preys at seeded ticks inside
/// `window`.
pub fn build_experiment(params: &ExperimentParams) -> Result<Scenario, ScenarioError> {
    ExperimentPlanner::new(params)?.draw()
}

/// Places the population once, then draws as many change schedules over it
/// as needed. Draws continue one seeded stream, so the n-th draw is
/// reproducible.
#[derive(Debug, Clone)]
pub struct ExperimentPlanner {
    params: ExperimentParams,
    base: Scenario,
    rng: ChaCha8Rng,
}

impl ExperimentPlanner {
    pub fn new(params: &ExperimentParams) -> Result<Self, ScenarioError> {
        if params.changes > params.tasks {
            return Err(ScenarioError::TooManyChanges {
                changes: params.changes,
                tasks: params.tasks,
            });
        }
        let mut world = GridWorld::new(params.width, params.height, params.seed)?;
        let needed = (1 + params.contractors + params.tasks + params.changes) as u64;
        let cells = u64::from(params.width) * u64::from(params.height);
        if needed > cells {
            return Err(ScenarioError::GridTooSmall { cells, needed });
        }
        let span = params.window.latest.saturating_sub(params.window.earliest) + 1;
        if params.changes > 0
            && (params.window.latest < params.window.earliest || (params.changes as u64) > span)
        {
            return Err(ScenarioError::WindowTooSmall {
                earliest: params.window.earliest,
                latest: params.window.latest,
                changes: params.changes,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut all: Vec<Cell> = (0..params.width)
            .flat_map(|x| (0..params.height).map(move |y| Cell::new(x, y)))
            .collect();
        all.shuffle(&mut rng);
        let mut free = all.into_iter();

        let manager = manager_id();
        world.add_predator(manager.clone(), free.next().expect("size checked"))?;
        let mut contractors = Vec::with_capacity(params.contractors);
        for i in 1..=params.contractors {
            let id = contractor_id(i);
            world.add_predator(id.clone(), free.next().expect("size checked"))?;
            contractors.push(ContractorProfile {
                id,
                capabilities: BTreeSet::from([CHASE.to_owned()]),
            });
        }
        let mut tasks = Vec::with_capacity(params.tasks);
        for i in 1..=params.tasks {
            let prey = prey_id(i);
            world.add_prey(&prey, free.next().expect("size checked"), false, None)?;
            tasks.push(capture_task(task_id(i), &prey));
        }
        for i in 1..=params.changes {
            let prey = prey_id(params.tasks + i);
            world.add_prey(&prey, free.next().expect("size checked"), true, None)?;
        }
        Ok(ExperimentPlanner {
            params: params.clone(),
            base: Scenario {
                world,
                manager,
                contractors,
                tasks,
                schedule: ChangeSchedule::default(),
            },
            rng,
        })
    }

    /// The placed population with no changes scheduled.
    pub fn base(&self) -> &Scenario {
        &self.base
    }

    /// The next scenario: the base population plus a freshly drawn schedule.
    pub fn draw(&mut self) -> Result<Scenario, ScenarioError> {
        let params = &self.params;
        let rng = &mut self.rng;
        let mut scenario = self.base.clone();
        let span = params.window.latest.saturating_sub(params.window.earliest) + 1;
        let mut order: Vec<usize> = (0..params.tasks).collect();
        order.shuffle(rng);
        let chosen = &order[..params.changes];
        let mut ticks: Vec<Tick> = if params.changes == 0 {
            Vec::new()
        } else {
            index::sample(rng, span as usize, params.changes)
                .into_iter()
                .map(|off| params.window.earliest + off as Tick)
                .collect()
        };
        ticks.sort_unstable();
        let mut dangerous: Vec<String> = (1..=params.changes)
            .map(|i| prey_id(params.tasks + i))
            .collect();
        dangerous.shuffle(rng);
        let mut injections = Vec::with_capacity(params.changes);
        for ((&task_idx, tick), new_target) in chosen.iter().zip(ticks).zip(dangerous) {
            injections.push(ChangeInjection {
                tick,
                task_id: scenario.tasks[task_idx].task_id.clone(),
                new_target,
            });
        }
        scenario.schedule = ChangeSchedule::new(injections)?;
        Ok(scenario)
    }
}
