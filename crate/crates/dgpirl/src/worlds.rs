//! Procedural benchmark generators: object world, binary world, and a
//! reduced highway, each yielding a tabular MDP, a per-state feature matrix
//! and the latent true reward.
//!
//! All generators are deterministic under their seed; instances serialize to
//! JSON so experiments can pin exact layouts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpirl::{mat_to_rows, rows_to_mat};
use crate::mdp::{RewardVector, TabularMdp};

/// A generated benchmark: MDP dynamics, state features, and the hidden
/// reward the demonstrations come from.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldInstance {
    pub mdp: TabularMdp,
    /// `n x m0` feature matrix.
    pub features: DMatrix<f64>,
    pub true_reward: RewardVector,
    pub meta: WorldMeta,
}

/// Generator provenance and layout, enough to re-derive every state's
/// reward independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum WorldMeta {
    ObjectWorld {
        n: usize,
        n_outer_colors: usize,
        dot_density: f64,
        wind: f64,
        gamma: f64,
        seed: u64,
        /// Layout attempts consumed before a non-degenerate draw.
        attempts: usize,
        /// Metric for the per-color nearest-dot feature distances.
        distance_metric: String,
        dots: Vec<Dot>,
    },
    BinaryWorld {
        n: usize,
        wind: f64,
        gamma: f64,
        seed: u64,
        /// Out-of-grid neighborhood cells encode as this feature value and
        /// count as non-blue for the reward.
        boundary_encoding: f64,
        /// Row-major cell colors, true = blue.
        blue: Vec<bool>,
    },
    Highway {
        lanes: usize,
        length: usize,
        n_vehicles: usize,
        gamma: f64,
        seed: u64,
        speed_bonus_step: f64,
        speeding_penalty: f64,
        police_radius: usize,
        vehicles: Vec<Vehicle>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub row: usize,
    pub col: usize,
    /// 0 = red, 1 = blue, 2.. = distractor colors.
    pub color: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub lane: usize,
    pub cell: usize,
    pub police: bool,
    pub motorcycle: bool,
}

// ---------------------------------------------------------------------------
// Shared gridworld dynamics: 5 actions (up/down/left/right/stay); the
// intended move succeeds with probability 1-wind, otherwise one of the five
// action outcomes is taken uniformly at random. Off-grid moves stay put.

const GRID_ACTIONS: [(isize, isize); 5] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

fn grid_transitions(n: usize, wind: f64) -> Vec<DMatrix<f64>> {
    let states = n * n;
    let outcome = |s: usize, a: usize| -> usize {
        let (r, c) = (s / n, s % n);
        let (dr, dc) = GRID_ACTIONS[a];
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nr >= n as isize || nc < 0 || nc >= n as isize {
            s
        } else {
            nr as usize * n + nc as usize
        }
    };
    (0..5)
        .map(|a| {
            let mut p = DMatrix::zeros(states, states);
            for s in 0..states {
                p[(s, outcome(s, a))] += 1.0 - wind;
                for a2 in 0..5 {
                    p[(s, outcome(s, a2))] += wind / 5.0;
                }
            }
            p
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Object world

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectWorldConfig {
    pub n: usize,
    pub n_outer_colors: usize,
    pub dot_density: f64,
    pub wind: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ObjectWorldConfig {
    fn default() -> Self {
        ObjectWorldConfig {
            n: 16,
            n_outer_colors: 2,
            dot_density: 0.1,
            wind: 0.3,
            gamma: 0.9,
            seed: 0,
        }
    }
}

/// Reward rule on raw Manhattan distances to the nearest red and blue dots.
fn object_reward(d_red: usize, d_blue: usize) -> f64 {
    if d_blue <= 3 {
        if d_red <= 1 {
            1.0
        } else {
            -1.0
        }
    } else {
        0.0
    }
}

/// Grid of colored dots; features are scaled nearest-dot distances per color
/// and the reward is a threshold rule on the red/blue distances.
pub fn gen_object_world(cfg: &ObjectWorldConfig) -> Result<WorldInstance> {
    if cfg.n < 4 {
        return Err(Error::invalid("object world", "grid must be at least 4"));
    }
    if !(cfg.dot_density > 0.0 && cfg.dot_density < 1.0) {
        return Err(Error::invalid("object world", "dot_density not in (0,1)"));
    }
    let n_colors = 2 + cfg.n_outer_colors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dots = Vec::new();
    let mut attempts = 0;
    for attempt in 1..=10 {
        attempts = attempt;
        dots.clear();
        for row in 0..cfg.n {
            for col in 0..cfg.n {
                if rng.gen::<f64>() < cfg.dot_density {
                    dots.push(Dot {
                        row,
                        col,
                        color: rng.gen_range(0..n_colors),
                    });
                }
            }
        }
        let mut seen = vec![false; n_colors];
        for d in &dots {
            seen[d.color] = true;
        }
        if seen.iter().all(|s| *s) {
            break;
        }
        if attempt == 10 {
            return Err(Error::WorldGeneration(format!(
                "no layout with every color present after {attempt} attempts \
                 (n = {}, density = {})",
                cfg.n, cfg.dot_density
            )));
        }
    }

    let states = cfg.n * cfg.n;
    let mut features = DMatrix::zeros(states, n_colors);
    let mut reward = DVector::zeros(states);
    for s in 0..states {
        let (r, c) = (s / cfg.n, s % cfg.n);
        let mut nearest = vec![usize::MAX; n_colors];
        for d in &dots {
            let dist = r.abs_diff(d.row) + c.abs_diff(d.col);
            if dist < nearest[d.color] {
                nearest[d.color] = dist;
            }
        }
        for color in 0..n_colors {
            features[(s, color)] = nearest[color] as f64;
        }
        reward[s] = object_reward(nearest[0], nearest[1]);
    }

    let mdp = TabularMdp::with_uniform_start(grid_transitions(cfg.n, cfg.wind), cfg.gamma)?;
    Ok(WorldInstance {
        mdp,
        features,
        true_reward: RewardVector::new(reward)?,
        meta: WorldMeta::ObjectWorld {
            n: cfg.n,
            n_outer_colors: cfg.n_outer_colors,
            dot_density: cfg.dot_density,
            wind: cfg.wind,
            gamma: cfg.gamma,
            seed: cfg.seed,
            attempts,
            distance_metric: "manhattan".to_string(),
            dots,
        },
    })
}

// ---------------------------------------------------------------------------
// Binary world

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryWorldConfig {
    pub n: usize,
    pub wind: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for BinaryWorldConfig {
    fn default() -> Self {
        BinaryWorldConfig {
            n: 12,
            wind: 0.3,
            gamma: 0.9,
            seed: 0,
        }
    }
}

/// Neighborhood offsets in row-major order.
const WINDOW: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

const BINARY_BOUNDARY: f64 = 0.5;

fn binary_reward(blue_count: usize) -> f64 {
    match blue_count {
        4 => 1.0,
        5 => -1.0,
        _ => 0.0,
    }
}

/// Each cell independently blue or red; the reward depends on the exact
/// count of blues in the 3x3 neighborhood, the features on its colors.
pub fn gen_binary_world(cfg: &BinaryWorldConfig) -> Result<WorldInstance> {
    if cfg.n < 3 {
        return Err(Error::invalid("binary world", "grid must be at least 3"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states = cfg.n * cfg.n;
    let blue: Vec<bool> = (0..states).map(|_| rng.gen_bool(0.5)).collect();

    let mut features = DMatrix::zeros(states, 9);
    let mut reward = DVector::zeros(states);
    for s in 0..states {
        let (r, c) = (s / cfg.n, s % cfg.n);
        let mut count = 0;
        for (k, (dr, dc)) in WINDOW.iter().enumerate() {
            let nr = r as isize + dr;
            let nc = c as isize + dc;
            if nr < 0 || nr >= cfg.n as isize || nc < 0 || nc >= cfg.n as isize {
                features[(s, k)] = BINARY_BOUNDARY;
            } else {
                let cell = nr as usize * cfg.n + nc as usize;
                if blue[cell] {
                    features[(s, k)] = 1.0;
                    count += 1;
                } else {
                    features[(s, k)] = 0.0;
                }
            }
        }
        reward[s] = binary_reward(count);
    }

    let mdp = TabularMdp::with_uniform_start(grid_transitions(cfg.n, cfg.wind), cfg.gamma)?;
    Ok(WorldInstance {
        mdp,
        features,
        true_reward: RewardVector::new(reward)?,
        meta: WorldMeta::BinaryWorld {
            n: cfg.n,
            wind: cfg.wind,
            gamma: cfg.gamma,
            seed: cfg.seed,
            boundary_encoding: BINARY_BOUNDARY,
            blue,
        },
    })
}

// ---------------------------------------------------------------------------
// Highway

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighwayConfig {
    pub lanes: usize,
    pub length: usize,
    pub n_vehicles: usize,
    pub gamma: f64,
    pub seed: u64,
    pub speed_bonus_step: f64,
    pub speeding_penalty: f64,
    pub police_radius: usize,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        HighwayConfig {
            lanes: 3,
            length: 32,
            n_vehicles: 8,
            gamma: 0.9,
            seed: 0,
            speed_bonus_step: 0.5,
            speeding_penalty: 2.0,
            police_radius: 2,
        }
    }
}

const N_SPEEDS: usize = 3;
/// left, right, faster, slower, keep
const N_HIGHWAY_ACTIONS: usize = 5;

fn highway_state(lane: usize, cell: usize, speed_idx: usize, length: usize) -> usize {
    (lane * length + cell) * N_SPEEDS + speed_idx
}

fn circ_dist(a: usize, b: usize, length: usize) -> usize {
    let d = (a + length - b) % length;
    d.min(length - d)
}

/// Ring road in the frame co-moving with traffic (traffic speed 1): static
/// vehicles, the robot advances `speed - 1` cells per step. State is
/// `(lane, cell, speed)`; reward grows with speed but speeding (speed 3)
/// near a police vehicle is penalized.
pub fn gen_highway(cfg: &HighwayConfig) -> Result<WorldInstance> {
    if cfg.lanes != 3 {
        return Err(Error::invalid("highway", "exactly 3 lanes supported"));
    }
    if cfg.length < 8 {
        return Err(Error::invalid("highway", "length must be at least 8"));
    }
    if cfg.n_vehicles >= cfg.lanes * cfg.length {
        return Err(Error::invalid("highway", "more vehicles than cells"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = vec![false; cfg.lanes * cfg.length];
    let mut vehicles = Vec::with_capacity(cfg.n_vehicles);
    let n_police = if cfg.n_vehicles == 0 {
        0
    } else {
        (cfg.n_vehicles / 4).max(1)
    };
    while vehicles.len() < cfg.n_vehicles {
        let lane = rng.gen_range(0..cfg.lanes);
        let cell = rng.gen_range(0..cfg.length);
        if taken[lane * cfg.length + cell] {
            continue; // placement collision: re-sample
        }
        taken[lane * cfg.length + cell] = true;
        vehicles.push(Vehicle {
            lane,
            cell,
            police: vehicles.len() < n_police,
            motorcycle: rng.gen_bool(0.5),
        });
    }

    let states = cfg.lanes * cfg.length * N_SPEEDS;
    let mut transitions = vec![DMatrix::zeros(states, states); N_HIGHWAY_ACTIONS];
    for lane in 0..cfg.lanes {
        for cell in 0..cfg.length {
            for speed_idx in 0..N_SPEEDS {
                let s = highway_state(lane, cell, speed_idx, cfg.length);
                for a in 0..N_HIGHWAY_ACTIONS {
                    let new_lane = match a {
                        0 => lane.saturating_sub(1),
                        1 => (lane + 1).min(cfg.lanes - 1),
                        _ => lane,
                    };
                    let new_speed_idx = match a {
                        2 => (speed_idx + 1).min(N_SPEEDS - 1),
                        3 => speed_idx.saturating_sub(1),
                        _ => speed_idx,
                    };
                    // Relative advance of speed over the traffic's speed 1.
                    let new_cell = (cell + new_speed_idx) % cfg.length;
                    let sp = highway_state(new_lane, new_cell, new_speed_idx, cfg.length);
                    transitions[a][(s, sp)] = 1.0;
                }
            }
        }
    }

    // Features: speed one-hot (3), lane one-hot (3), then per
    // {civilian, police} x {car, motorcycle} x {same, left, right lane} the
    // signed distance to the nearest such vehicle ahead and behind, in units
    // of twice the police radius so the reward-relevant band is O(1).
    let dist_unit = 2.0 * cfg.police_radius.max(1) as f64;
    let m0 = 6 + 4 * 3 * 2;
    let mut features = DMatrix::zeros(states, m0);
    let mut reward = DVector::zeros(states);
    for lane in 0..cfg.lanes {
        for cell in 0..cfg.length {
            for speed_idx in 0..N_SPEEDS {
                let s = highway_state(lane, cell, speed_idx, cfg.length);
                features[(s, speed_idx)] = 1.0;
                features[(s, 3 + lane)] = 1.0;
                let mut col = 6;
                for police in [false, true] {
                    for motorcycle in [false, true] {
                        for lane_off in [0isize, -1, 1] {
                            let target = lane as isize + lane_off;
                            let (mut ahead, mut behind) = (cfg.length, cfg.length);
                            if target >= 0 && target < cfg.lanes as isize {
                                for v in &vehicles {
                                    if v.police == police
                                        && v.motorcycle == motorcycle
                                        && v.lane == target as usize
                                    {
                                        ahead =
                                            ahead.min((v.cell + cfg.length - cell) % cfg.length);
                                        behind =
                                            behind.min((cell + cfg.length - v.cell) % cfg.length);
                                    }
                                }
                            }
                            features[(s, col)] = ahead as f64 / dist_unit;
                            features[(s, col + 1)] = -(behind as f64) / dist_unit;
                            col += 2;
                        }
                    }
                }
                let speed = speed_idx + 1;
                let police_near = vehicles.iter().any(|v| {
                    v.police && circ_dist(cell, v.cell, cfg.length) <= cfg.police_radius
                });
                let mut r = cfg.speed_bonus_step * (speed as f64 - 1.0);
                if speed == 3 && police_near {
                    r -= cfg.speeding_penalty;
                }
                reward[s] = r;
            }
        }
    }

    let mdp = TabularMdp::with_uniform_start(transitions, cfg.gamma)?;
    Ok(WorldInstance {
        mdp,
        features,
        true_reward: RewardVector::new(reward)?,
        meta: WorldMeta::Highway {
            lanes: cfg.lanes,
            length: cfg.length,
            n_vehicles: cfg.n_vehicles,
            gamma: cfg.gamma,
            seed: cfg.seed,
            speed_bonus_step: cfg.speed_bonus_step,
            speeding_penalty: cfg.speeding_penalty,
            police_radius: cfg.police_radius,
            vehicles,
        },
    })
}

/// For highway instances: which states violate the police-proximity speed
/// rule (speed 3 with a police vehicle within the radius).
pub fn speeding_mask(world: &WorldInstance) -> Option<Vec<bool>> {
    match &world.meta {
        WorldMeta::Highway {
            lanes,
            length,
            police_radius,
            vehicles,
            ..
        } => {
            let mut mask = vec![false; lanes * length * N_SPEEDS];
            for lane in 0..*lanes {
                for cell in 0..*length {
                    let police_near = vehicles
                        .iter()
                        .any(|v| v.police && circ_dist(cell, v.cell, *length) <= *police_radius);
                    if police_near {
                        mask[highway_state(lane, cell, N_SPEEDS - 1, *length)] = true;
                    }
                }
            }
            Some(mask)
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// JSON form

#[derive(Serialize, Deserialize)]
struct WorldJson {
    mdp: TabularMdp,
    features: Vec<Vec<f64>>,
    true_reward: RewardVector,
    meta: WorldMeta,
}

impl Serialize for WorldInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WorldJson {
            mdp: self.mdp.clone(),
            features: mat_to_rows(&self.features),
            true_reward: self.true_reward.clone(),
            meta: self.meta.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WorldInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = WorldJson::deserialize(d)?;
        let features = rows_to_mat(&j.features).map_err(D::Error::custom)?;
        if features.nrows() != j.mdp.n_states() || j.true_reward.len() != j.mdp.n_states() {
            return Err(D::Error::custom("feature/reward row count != n_states"));
        }
        Ok(WorldInstance {
            mdp: j.mdp,
            features,
            true_reward: j.true_reward,
            meta: j.meta,
        })
    }
}
