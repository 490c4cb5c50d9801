//! Built-in domains: Taxi, StackBot (plain and cautious) and a two-state
//! chain used as a small solver fixture.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::{DomainModel, DomainParts, FeatureSpec, Glyph, GridLayout, Transition};

pub const TAXI_DISCOUNT: f64 = 0.95;
pub const STACKBOT_DISCOUNT: f64 = 0.95;

const MOVES: [(&str, i64, i64); 4] = [
    ("Move North", -1, 0),
    ("Move South", 1, 0),
    ("Move East", 0, 1),
    ("Move West", 0, -1),
];

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["taxi", "stackbot", "stackbot-cautious", "chain"];

pub fn builtin(name: &str) -> Option<DomainModel> {
    match name {
        "taxi" => Some(build_taxi()),
        "stackbot" => Some(build_stackbot()),
        "stackbot-cautious" => Some(build_stackbot_cautious()),
        "chain" => Some(build_chain()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Taxi
// ---------------------------------------------------------------------------

/// Static layout of the Taxi grid.
#[derive(Debug, Clone)]
pub struct TaxiConfig {
    pub rows: usize,
    pub cols: usize,
    /// R, G, Y, B as (row, col).
    pub locations: [(usize, usize); 4],
    /// Blocked edges between horizontally adjacent cells: `(row, left col)`
    /// blocks travel between `col` and `col + 1`.
    pub walls: Vec<(usize, usize)>,
}

impl Default for TaxiConfig {
    fn default() -> Self {
        // +---------+
        // |R: | : :G|
        // | : | : : |
        // | : : : : |
        // | | : | : |
        // |Y| : |B: |
        // +---------+
        Self {
            rows: 5,
            cols: 5,
            locations: [(0, 0), (0, 4), (4, 0), (4, 3)],
            walls: vec![(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)],
        }
    }
}

pub const TAXI_LOCATION_NAMES: [&str; 4] = ["R", "G", "Y", "B"];
/// Passenger feature value meaning "in the taxi".
pub const TAXI_IN_CAR: usize = 4;

pub const TAXI_NORTH: usize = 0;
pub const TAXI_SOUTH: usize = 1;
pub const TAXI_EAST: usize = 2;
pub const TAXI_WEST: usize = 3;
pub const TAXI_PICKUP: usize = 4;
pub const TAXI_DROPOFF: usize = 5;

impl TaxiConfig {
    pub fn state_id(&self, row: usize, col: usize, passenger: usize, destination: usize) -> usize {
        ((row * self.cols + col) * 5 + passenger) * 4 + destination
    }

    fn blocked(&self, row: usize, col: usize, dcol: i64) -> bool {
        match dcol {
            1 => self.walls.contains(&(row, col)),
            -1 => col > 0 && self.walls.contains(&(row, col - 1)),
            _ => false,
        }
    }

    fn moved(&self, row: usize, col: usize, dr: i64, dc: i64) -> (usize, usize) {
        let r = row as i64 + dr;
        let c = col as i64 + dc;
        if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 || self.blocked(row, col, dc) {
            (row, col)
        } else {
            (r as usize, c as usize)
        }
    }
}

pub fn build_taxi() -> DomainModel {
    build_taxi_with(&TaxiConfig::default()).expect("canonical taxi layout is valid")
}

pub fn build_taxi_with(config: &TaxiConfig) -> Result<DomainModel> {
    let n = config.rows * config.cols * 5 * 4;
    let mut states = vec![(Vec::new(), false); n];
    let mut transitions = vec![Vec::new(); n];
    let mut placements = vec![Vec::new(); n];
    let mut subgoals = BTreeMap::new();

    for row in 0..config.rows {
        for col in 0..config.cols {
            for passenger in 0..5 {
                for destination in 0..4 {
                    let id = config.state_id(row, col, passenger, destination);
                    let terminal = passenger == destination;
                    states[id] = (
                        vec![row as f64, col as f64, passenger as f64, destination as f64],
                        terminal,
                    );

                    let mut glyphs = vec![Glyph {
                        kind: "taxi".into(),
                        row: row as i64,
                        col: col as i64,
                    }];
                    if passenger == TAXI_IN_CAR {
                        glyphs.push(Glyph {
                            kind: "passenger-in-taxi".into(),
                            row: row as i64,
                            col: col as i64,
                        });
                    } else {
                        let (pr, pc) = config.locations[passenger];
                        glyphs.push(Glyph {
                            kind: "passenger".into(),
                            row: pr as i64,
                            col: pc as i64,
                        });
                    }
                    let (dr, dc) = config.locations[destination];
                    glyphs.push(Glyph {
                        kind: "destination".into(),
                        row: dr as i64,
                        col: dc as i64,
                    });
                    placements[id] = glyphs;

                    if terminal {
                        continue;
                    }
                    let stay = Transition::certain(id, -1.0);
                    let mut rows = Vec::with_capacity(6);
                    for &(_, dr, dc) in &MOVES {
                        let (r, c) = config.moved(row, col, dr, dc);
                        rows.push(vec![Transition::certain(
                            config.state_id(r, c, passenger, destination),
                            -1.0,
                        )]);
                    }
                    let pickup = if passenger < 4 && config.locations[passenger] == (row, col) {
                        Transition::certain(config.state_id(row, col, TAXI_IN_CAR, destination), -1.0)
                    } else {
                        stay
                    };
                    rows.push(vec![pickup]);
                    let dropoff = if passenger == TAXI_IN_CAR && config.locations[destination] == (row, col) {
                        Transition::certain(config.state_id(row, col, destination, destination), 20.0)
                    } else {
                        stay
                    };
                    rows.push(vec![dropoff]);
                    transitions[id] = rows;

                    let label = if passenger == TAXI_IN_CAR {
                        "drop off the passenger"
                    } else {
                        "pick up the passenger"
                    };
                    for a in 0..6 {
                        subgoals.insert((id, a), label.to_string());
                    }
                }
            }
        }
    }

    let walls = config
        .walls
        .iter()
        .map(|&(r, c)| [r, c, r, c + 1])
        .collect();

    DomainModel::new(DomainParts {
        name: "taxi".into(),
        discount: TAXI_DISCOUNT,
        features: vec![
            FeatureSpec::new("taxi_row", 0.0, (config.rows - 1) as f64),
            FeatureSpec::new("taxi_col", 0.0, (config.cols - 1) as f64),
            FeatureSpec::new("passenger", 0.0, 4.0),
            FeatureSpec::new("destination", 0.0, 3.0),
        ],
        actions: MOVES
            .iter()
            .map(|m| m.0.to_string())
            .chain(["Pickup".to_string(), "Dropoff".to_string()])
            .collect(),
        states,
        transitions,
        layout: Some(GridLayout {
            width: config.cols,
            height: config.rows,
            walls,
            placements,
        }),
        subgoals,
    })
}

// ---------------------------------------------------------------------------
// StackBot
// ---------------------------------------------------------------------------

/// Where one box is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxStatus {
    Floor { row: usize, col: usize },
    Held,
    Delivered,
}

#[derive(Debug, Clone)]
pub struct StackBotConfig {
    pub size: usize,
    pub goal: (usize, usize),
    pub capacity: usize,
    pub step_reward: f64,
    pub pickup_reward: f64,
    pub delivery_reward: f64,
    pub completion_bonus: f64,
    /// Extra per-step cost for every box held beyond the first.
    pub extra_box_penalty: f64,
}

impl Default for StackBotConfig {
    fn default() -> Self {
        Self {
            size: 4,
            goal: (3, 3),
            capacity: 2,
            step_reward: -1.0,
            pickup_reward: 20.0,
            delivery_reward: 350.0,
            completion_bonus: 500.0,
            extra_box_penalty: 0.0,
        }
    }
}

/// Penalty per extra held box per step in the cautious variant.
pub const CAUTIOUS_EXTRA_BOX_PENALTY: f64 = 50.0;

pub const STACKBOT_PICKUP: usize = 4;
pub const STACKBOT_DROPOFF: usize = 5;
/// Index of the remaining-capacity feature.
pub const STACKBOT_CAPACITY_FEATURE: usize = 0;

impl StackBotConfig {
    pub fn cautious() -> Self {
        Self {
            extra_box_penalty: CAUTIOUS_EXTRA_BOX_PENALTY,
            ..Self::default()
        }
    }

    /// Statuses a box can be in: every non-goal floor cell, then held, then delivered.
    pub fn box_statuses(&self) -> Vec<BoxStatus> {
        let mut out = Vec::new();
        for row in 0..self.size {
            for col in 0..self.size {
                if (row, col) != self.goal {
                    out.push(BoxStatus::Floor { row, col });
                }
            }
        }
        out.push(BoxStatus::Held);
        out.push(BoxStatus::Delivered);
        out
    }

    fn box_coords(&self, status: BoxStatus) -> (f64, f64) {
        match status {
            BoxStatus::Floor { row, col } => (row as f64, col as f64),
            BoxStatus::Held => (-1.0, -1.0),
            BoxStatus::Delivered => (self.goal.0 as f64, self.goal.1 as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct StackKey {
    robot: (usize, usize),
    boxes: [usize; 2],
}

pub fn build_stackbot() -> DomainModel {
    build_stackbot_with("stackbot", &StackBotConfig::default()).expect("stackbot is valid")
}

/// StackBot with a per-step cost for carrying more than one box.
pub fn build_stackbot_cautious() -> DomainModel {
    build_stackbot_with("stackbot-cautious", &StackBotConfig::cautious()).expect("stackbot is valid")
}

pub fn build_stackbot_with(name: &str, config: &StackBotConfig) -> Result<DomainModel> {
    if config.capacity != 2 {
        return Err(Error::Contract("StackBot models exactly two boxes with capacity 2".into()));
    }
    let statuses = config.box_statuses();
    let held_idx = statuses.len() - 2;
    let delivered_idx = statuses.len() - 1;

    // Enumerate valid states; boxes on the floor never share a cell.
    let mut keys = Vec::new();
    for b0 in 0..statuses.len() {
        for b1 in 0..statuses.len() {
            if b0 < held_idx && b0 == b1 {
                continue;
            }
            for row in 0..config.size {
                for col in 0..config.size {
                    keys.push(StackKey {
                        robot: (row, col),
                        boxes: [b0, b1],
                    });
                }
            }
        }
    }
    let index: BTreeMap<StackKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut states = Vec::with_capacity(keys.len());
    let mut transitions = Vec::with_capacity(keys.len());
    let mut placements = Vec::with_capacity(keys.len());
    let mut subgoals = BTreeMap::new();
    let size = config.size as i64;

    for (id, key) in keys.iter().enumerate() {
        let held = key.boxes.iter().filter(|&&b| b == held_idx).count();
        let remaining = config.capacity - held;
        let terminal = key.boxes.iter().all(|&b| b == delivered_idx);
        let (b0r, b0c) = config.box_coords(statuses[key.boxes[0]]);
        let (b1r, b1c) = config.box_coords(statuses[key.boxes[1]]);
        states.push((
            vec![
                remaining as f64,
                key.robot.0 as f64,
                key.robot.1 as f64,
                b0r,
                b0c,
                b1r,
                b1c,
            ],
            terminal,
        ));

        let mut glyphs = vec![Glyph {
            kind: "robot".into(),
            row: key.robot.0 as i64,
            col: key.robot.1 as i64,
        }];
        glyphs.push(Glyph {
            kind: "goal".into(),
            row: config.goal.0 as i64,
            col: config.goal.1 as i64,
        });
        for &b in &key.boxes {
            let (kind, (r, c)) = match statuses[b] {
                BoxStatus::Floor { row, col } => ("box", (row, col)),
                BoxStatus::Held => ("box-held", key.robot),
                BoxStatus::Delivered => ("box-delivered", config.goal),
            };
            glyphs.push(Glyph {
                kind: kind.into(),
                row: r as i64,
                col: c as i64,
            });
        }
        placements.push(glyphs);

        if terminal {
            transitions.push(Vec::new());
            continue;
        }

        let cost = config.step_reward - config.extra_box_penalty * held.saturating_sub(1) as f64;
        let stay = Transition::certain(id, cost);
        let mut rows = Vec::with_capacity(6);
        for &(_, dr, dc) in &MOVES {
            let r = key.robot.0 as i64 + dr;
            let c = key.robot.1 as i64 + dc;
            if r < 0 || c < 0 || r >= size || c >= size {
                rows.push(vec![stay]);
            } else {
                let next = StackKey {
                    robot: (r as usize, c as usize),
                    boxes: key.boxes,
                };
                rows.push(vec![Transition::certain(index[&next], cost)]);
            }
        }

        let here = statuses
            .iter()
            .position(|s| *s == BoxStatus::Floor { row: key.robot.0, col: key.robot.1 });
        let pickup = match here.and_then(|cell| key.boxes.iter().position(|&b| b == cell)) {
            Some(slot) if remaining > 0 => {
                let mut boxes = key.boxes;
                boxes[slot] = held_idx;
                let reward = config.pickup_reward - config.extra_box_penalty * held.saturating_sub(1) as f64;
                Transition::certain(index[&StackKey { robot: key.robot, boxes }], reward)
            }
            _ => stay,
        };
        rows.push(vec![pickup]);

        let dropoff = match key.boxes.iter().position(|&b| b == held_idx) {
            Some(slot) if key.robot == config.goal => {
                let mut boxes = key.boxes;
                boxes[slot] = delivered_idx;
                let mut reward = config.delivery_reward
                    - config.extra_box_penalty * held.saturating_sub(1) as f64;
                if boxes.iter().all(|&b| b == delivered_idx) {
                    reward += config.completion_bonus;
                }
                Transition::certain(index[&StackKey { robot: key.robot, boxes }], reward)
            }
            _ => stay,
        };
        rows.push(vec![dropoff]);
        transitions.push(rows);

        let label = if held == 0 {
            "pick up a box"
        } else {
            "deliver the held box"
        };
        for a in 0..6 {
            subgoals.insert((id, a), label.to_string());
        }
    }

    let max = (config.size - 1) as f64;
    DomainModel::new(DomainParts {
        name: name.into(),
        discount: STACKBOT_DISCOUNT,
        features: vec![
            FeatureSpec::new("remaining_capacity", 0.0, config.capacity as f64),
            FeatureSpec::new("robot_row", 0.0, max),
            FeatureSpec::new("robot_col", 0.0, max),
            FeatureSpec::new("box1_row", -1.0, max),
            FeatureSpec::new("box1_col", -1.0, max),
            FeatureSpec::new("box2_row", -1.0, max),
            FeatureSpec::new("box2_col", -1.0, max),
        ],
        actions: MOVES
            .iter()
            .map(|m| m.0.to_string())
            .chain(["Pickup Box".to_string(), "Dropoff".to_string()])
            .collect(),
        states,
        transitions,
        layout: Some(GridLayout {
            width: config.size,
            height: config.size,
            walls: Vec::new(),
            placements,
        }),
        subgoals,
    })
}

// ---------------------------------------------------------------------------
// Two-state chain
// ---------------------------------------------------------------------------

/// `s0 --advance (r = 10)--> s1 (terminal)`, with `wait` looping on `s0`
/// for reward 0. Discount 0.9.
pub fn build_chain() -> DomainModel {
    DomainModel::new(DomainParts {
        name: "chain".into(),
        discount: 0.9,
        features: vec![FeatureSpec::new("position", 0.0, 1.0)],
        actions: vec!["advance".into(), "wait".into()],
        states: vec![(vec![0.0], false), (vec![1.0], true)],
        transitions: vec![
            vec![vec![Transition::certain(1, 10.0)], vec![Transition::certain(0, 0.0)]],
            Vec::new(),
        ],
        layout: None,
        subgoals: BTreeMap::new(),
    })
    .expect("chain is valid")
}
