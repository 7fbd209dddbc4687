//! State space and transition rules of the coalescence-evaporation-deposition
//! lattice model.
//!
//! Particles sit on the sites of a periodic `d`-dimensional box of side `L`,
//! at most one per site, each carrying a positive integer mass. Three kinds of
//! transitions exist:
//!
//! * **hop**: every particle jumps at total rate [`HOP_RATE`] to one of its
//!   `2d` neighbour slots chosen uniformly; landing on an occupied site merges
//!   the two particles, masses adding up;
//! * **evaporation**: every particle loses one unit of mass at rate `p`, and
//!   vanishes when its mass reaches zero;
//! * **deposition**: every site receives a monomer at rate `q`, which merges
//!   with the occupant if there is one.
//!
//! Everything else in the crate goes through [`LatticeState::apply_event`] and
//! [`total_rate`]; nothing else mutates a lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total jump rate of one particle, summed over its neighbour slots.
pub const HOP_RATE: f64 = 1.0;

/// Tag stamped on every output so results stay interpretable if the hop-rate
/// convention ever changes.
pub const HOP_CONVENTION: &str = "total-rate-1";

/// Sentinel in `slot_of` for empty sites.
const NO_SLOT: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid rate `{name}` = {value}: rates must be finite and non-negative")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("site {site} is empty, cannot {action}")]
    EmptySite { site: usize, action: &'static str },
    #[error("site {site} out of range for a lattice of {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("direction {direction} out of range for {slots} neighbour slots")]
    InvalidDirection { direction: usize, slots: usize },
    #[error("mass overflow at site {site}")]
    MassOverflow { site: usize },
}

/// Periodic hypercubic box `{0..L}^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    dim: u32,
    side: u32,
    sites: usize,
}

impl Geometry {
    /// `side == 1` is accepted here; simulation front-ends are expected to
    /// demand `side >= 2` and keep the single site for the exact oracle.
    pub fn new(dim: u32, side: u32) -> Result<Self, ModelError> {
        if dim < 1 {
            return Err(ModelError::InvalidGeometry(format!(
                "dimension must be at least 1, got {dim}"
            )));
        }
        if side < 1 {
            return Err(ModelError::InvalidGeometry(format!(
                "side length must be at least 1, got {side}"
            )));
        }
        let sites = (side as usize)
            .checked_pow(dim)
            .filter(|&s| s <= u32::MAX as usize)
            .ok_or_else(|| ModelError::InvalidGeometry(format!("{side}^{dim} sites do not fit in memory")))?;
        Ok(Geometry { dim, side, sites })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    /// Number of sites `S = L^d`.
    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Number of neighbour slots per site, `2d`. Slots `2k` and `2k + 1` step
    /// by `+1` and `-1` along axis `k`.
    pub fn slots(&self) -> usize {
        2 * self.dim as usize
    }

    /// Site reached from `site` through neighbour slot `slot`.
    ///
    /// With `L = 2` both slots of an axis reach the same site; with `L = 1`
    /// every slot points back at `site`.
    pub fn neighbor(&self, site: usize, slot: usize) -> usize {
        let axis = (slot / 2) as u32;
        let by = if slot.is_multiple_of(2) { 1 } else { -1 };
        self.shift(site, axis, by)
    }

    /// Cyclic shift of `site` by `by` steps along `axis`.
    pub fn shift(&self, site: usize, axis: u32, by: i64) -> usize {
        let side = self.side as usize;
        let stride = side.pow(axis);
        let coord = (site / stride) % side;
        let moved = (coord as i64 + by).rem_euclid(side as i64) as usize;
        site - coord * stride + moved * stride
    }
}

/// Evaporation rate `p` (per particle) and deposition rate `q` (per site).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub p: f64,
    pub q: f64,
}

impl Params {
    pub fn new(p: f64, q: f64) -> Result<Self, ModelError> {
        for (name, value) in [("p", p), ("q", q)] {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidRate { name, value });
            }
        }
        Ok(Params { p, q })
    }
}

/// One transition of the process, not yet applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Hop { site: usize, direction: usize },
    Evaporate { site: usize },
    Deposit { site: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Hop,
    Evaporate,
    Deposit,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Hop { .. } => EventKind::Hop,
            Event::Evaporate { .. } => EventKind::Evaporate,
            Event::Deposit { .. } => EventKind::Deposit,
        }
    }

    pub fn site(&self) -> usize {
        match *self {
            Event::Hop { site, .. } | Event::Evaporate { site } | Event::Deposit { site } => site,
        }
    }

    /// The same event applied to the cyclically shifted lattice.
    pub fn translated(&self, geom: &Geometry, axis: u32, by: i64) -> Event {
        match *self {
            Event::Hop { site, direction } => Event::Hop {
                site: geom.shift(site, axis, by),
                direction,
            },
            Event::Evaporate { site } => Event::Evaporate {
                site: geom.shift(site, axis, by),
            },
            Event::Deposit { site } => Event::Deposit {
                site: geom.shift(site, axis, by),
            },
        }
    }
}

/// Mass of one site before and after a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteChange {
    pub site: usize,
    pub before: u64,
    pub after: u64,
}

/// Sites touched by one applied event: one for evaporation/deposition, two
/// for a hop between distinct sites, none for a hop onto its own site
/// (`L = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transition {
    changes: [Option<SiteChange>; 2],
}

impl Transition {
    fn one(change: SiteChange) -> Self {
        Transition {
            changes: [Some(change), None],
        }
    }

    pub fn changes(&self) -> impl Iterator<Item = &SiteChange> {
        self.changes.iter().flatten()
    }
}

/// Site masses plus a dense index of occupied sites for O(1) uniform
/// particle sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeState {
    geom: Geometry,
    mass: Vec<u64>,
    occupied: Vec<usize>,
    slot_of: Vec<usize>,
    total_mass: u64,
    high_water: u64,
}

impl LatticeState {
    /// Empty lattice.
    pub fn new(geom: Geometry) -> Self {
        LatticeState {
            geom,
            mass: vec![0; geom.sites()],
            occupied: Vec::new(),
            slot_of: vec![NO_SLOT; geom.sites()],
            total_mass: 0,
            high_water: 0,
        }
    }

    pub fn from_masses(geom: Geometry, masses: &[u64]) -> Result<Self, ModelError> {
        if masses.len() != geom.sites() {
            return Err(ModelError::InvalidGeometry(format!(
                "expected {} site masses, got {}",
                geom.sites(),
                masses.len()
            )));
        }
        let mut state = LatticeState::new(geom);
        for (site, &m) in masses.iter().enumerate() {
            if m > 0 {
                state.total_mass = state
                    .total_mass
                    .checked_add(m)
                    .ok_or(ModelError::MassOverflow { site })?;
                state.occupy(site, m);
            }
        }
        Ok(state)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn sites(&self) -> usize {
        self.geom.sites()
    }

    pub fn mass(&self, site: usize) -> u64 {
        self.mass[site]
    }

    pub fn masses(&self) -> &[u64] {
        &self.mass
    }

    /// Occupied sites in internal (sampling) order.
    pub fn occupied(&self) -> &[usize] {
        &self.occupied
    }

    /// Number of particles `N`.
    pub fn particle_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn total_mass(&self) -> u64 {
        self.total_mass
    }

    /// Largest single-site mass ever held by this state.
    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    fn occupy(&mut self, site: usize, m: u64) {
        debug_assert_eq!(self.slot_of[site], NO_SLOT);
        self.mass[site] = m;
        self.slot_of[site] = self.occupied.len();
        self.occupied.push(site);
        self.high_water = self.high_water.max(m);
    }

    fn vacate(&mut self, site: usize) {
        let slot = self.slot_of[site];
        debug_assert_ne!(slot, NO_SLOT);
        self.occupied.swap_remove(slot);
        if let Some(&moved) = self.occupied.get(slot) {
            self.slot_of[moved] = slot;
        }
        self.slot_of[site] = NO_SLOT;
        self.mass[site] = 0;
    }

    fn set_mass(&mut self, site: usize, m: u64) {
        self.mass[site] = m;
        self.high_water = self.high_water.max(m);
    }

    fn check_site(&self, site: usize) -> Result<(), ModelError> {
        if site >= self.sites() {
            return Err(ModelError::SiteOutOfRange {
                site,
                sites: self.sites(),
            });
        }
        Ok(())
    }

    /// Applies `ev` in place and reports which sites changed.
    ///
    /// On error the state is left untouched.
    pub fn apply_event(&mut self, ev: Event) -> Result<Transition, ModelError> {
        match ev {
            Event::Hop { site, direction } => {
                self.check_site(site)?;
                if direction >= self.geom.slots() {
                    return Err(ModelError::InvalidDirection {
                        direction,
                        slots: self.geom.slots(),
                    });
                }
                let m = self.mass[site];
                if m == 0 {
                    return Err(ModelError::EmptySite { site, action: "hop" });
                }
                let target = self.geom.neighbor(site, direction);
                if target == site {
                    return Ok(Transition::default());
                }
                let at_target = self.mass[target];
                let merged = at_target
                    .checked_add(m)
                    .ok_or(ModelError::MassOverflow { site: target })?;
                self.vacate(site);
                if at_target == 0 {
                    self.occupy(target, merged);
                } else {
                    self.set_mass(target, merged);
                }
                Ok(Transition {
                    changes: [
                        Some(SiteChange {
                            site,
                            before: m,
                            after: 0,
                        }),
                        Some(SiteChange {
                            site: target,
                            before: at_target,
                            after: merged,
                        }),
                    ],
                })
            }
            Event::Evaporate { site } => {
                self.check_site(site)?;
                let m = self.mass[site];
                if m == 0 {
                    return Err(ModelError::EmptySite {
                        site,
                        action: "evaporate",
                    });
                }
                if m == 1 {
                    self.vacate(site);
                } else {
                    self.mass[site] = m - 1;
                }
                self.total_mass -= 1;
                Ok(Transition::one(SiteChange {
                    site,
                    before: m,
                    after: m - 1,
                }))
            }
            Event::Deposit { site } => {
                self.check_site(site)?;
                let m = self.mass[site];
                let grown = m.checked_add(1).ok_or(ModelError::MassOverflow { site })?;
                let total = self
                    .total_mass
                    .checked_add(1)
                    .ok_or(ModelError::MassOverflow { site })?;
                if m == 0 {
                    self.occupy(site, 1);
                } else {
                    self.set_mass(site, grown);
                }
                self.total_mass = total;
                Ok(Transition::one(SiteChange {
                    site,
                    before: m,
                    after: grown,
                }))
            }
        }
    }

    /// Cyclic shift of the whole configuration along `axis`.
    pub fn translated(&self, axis: u32, by: i64) -> LatticeState {
        let mut masses = vec![0; self.sites()];
        for (site, &m) in self.mass.iter().enumerate() {
            masses[self.geom.shift(site, axis, by)] = m;
        }
        LatticeState::from_masses(self.geom, &masses).expect("shift preserves masses")
    }

    /// Verifies the bookkeeping invariants; used by tests and debug hooks.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut total: u64 = 0;
        let mut count = 0;
        for (site, &m) in self.mass.iter().enumerate() {
            total += m;
            let slot = self.slot_of[site];
            if m > 0 {
                count += 1;
                if slot == NO_SLOT || self.occupied.get(slot) != Some(&site) {
                    return Err(format!("occupied site {site} missing from the index"));
                }
            } else if slot != NO_SLOT {
                return Err(format!("empty site {site} present in the index"));
            }
        }
        if count != self.occupied.len() {
            return Err(format!(
                "index holds {} sites, {count} are occupied",
                self.occupied.len()
            ));
        }
        if total != self.total_mass {
            return Err(format!(
                "running total mass {} differs from the sum {total}",
                self.total_mass
            ));
        }
        Ok(())
    }
}

/// Total event rate `R = N (HOP_RATE + p) + S q`.
pub fn total_rate(state: &LatticeState, params: &Params) -> f64 {
    state.particle_count() as f64 * (HOP_RATE + params.p) + state.sites() as f64 * params.q
}
