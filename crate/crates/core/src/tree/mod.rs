//! One realised branching tree: Ulam–Harris labelled particle records with
//! per-lifetime paths, and the ancestry queries the weights are built from.

mod path;

use std::fmt;
use std::io::{self, Write};

pub use path::{path_integral, Path};

use crate::error::{Error, Result};

/// Index of a particle record inside its tree.
pub type ParticleId = u32;

/// Ulam–Harris label: child indices from the root. The root is the empty label.
///
/// Labels order lexicographically, ancestors before descendants.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Label(Vec::new())
    }

    pub fn from_indices(indices: impl Into<Vec<u32>>) -> Self {
        Label(indices.into())
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, index: u32) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        Label(v)
    }

    pub fn parent(&self) -> Option<Self> {
        (!self.0.is_empty()).then(|| Label(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn is_ancestor_of(&self, other: &Label) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for Label {
    /// `r` for the root, `r.0.1` for the second child of the root's first child.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r")?;
        for i in &self.0 {
            write!(f, ".{i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord {
    pub parent: Option<ParticleId>,
    pub child_index: u32,
    pub generation: u32,
    pub birth: f64,
    /// `None` while alive at the horizon.
    pub death: Option<f64>,
    /// Number of children `A_v`; defined once the particle has died.
    pub offspring: Option<u32>,
    /// Children occupy `first_child .. first_child + offspring`. `None` when the
    /// particle left no children, or they were never created because the
    /// particle cap was hit.
    pub first_child: Option<ParticleId>,
    /// The particle's own lifetime, `[birth, death ∧ horizon]`.
    pub path: Path,
}

impl ParticleRecord {
    #[inline]
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && self.death.is_none_or(|d| t < d)
    }

    pub fn children(&self) -> impl Iterator<Item = ParticleId> {
        let n = if self.first_child.is_some() {
            self.offspring.unwrap_or(0)
        } else {
            0
        };
        let first = self.first_child.unwrap_or(0);
        (0..n).map(move |i| first + i)
    }
}

/// A realised branching process on `[0, horizon]`.
///
/// Records are stored so that every parent precedes its children and siblings
/// are contiguous. If the particle cap was hit the tree is exact only on
/// `[0, complete_until)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    particles: Vec<ParticleRecord>,
    horizon: f64,
    complete_until: f64,
    truncated: bool,
    extinct_at: Option<f64>,
}

impl Tree {
    pub(crate) fn from_parts(
        particles: Vec<ParticleRecord>,
        horizon: f64,
        truncated: bool,
        complete_until: f64,
    ) -> Self {
        let extinct_at = if truncated || particles.iter().any(|p| p.death.is_none()) {
            None
        } else {
            particles.iter().filter_map(|p| p.death).reduce(f64::max)
        };
        Self {
            particles,
            horizon,
            complete_until: if truncated { complete_until } else { horizon },
            truncated,
            extinct_at,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Queries are exact for `t` below this time (the horizon unless truncated).
    pub fn complete_until(&self) -> f64 {
        self.complete_until
    }

    pub fn extinct_at(&self) -> Option<f64> {
        self.extinct_at
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn records(&self) -> &[ParticleRecord] {
        &self.particles
    }

    pub fn record(&self, id: ParticleId) -> &ParticleRecord {
        &self.particles[id as usize]
    }

    /// Whether a query at `t` is answerable.
    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::QueryOutOfRange { t, limit: self.horizon });
        }
        if self.truncated && t >= self.complete_until {
            return Err(Error::TruncatedTree {
                t,
                complete_until: self.complete_until,
            });
        }
        Ok(())
    }

    pub fn label(&self, id: ParticleId) -> Label {
        let mut indices = Vec::new();
        let mut cur = self.record(id);
        while let Some(parent) = cur.parent {
            indices.push(cur.child_index);
            cur = self.record(parent);
        }
        indices.reverse();
        Label(indices)
    }

    pub fn find(&self, label: &Label) -> Option<ParticleId> {
        let mut id: ParticleId = 0;
        if self.particles.is_empty() {
            return None;
        }
        for &i in label.indices() {
            let rec = self.record(id);
            let first = rec.first_child?;
            if i >= rec.offspring.unwrap_or(0) {
                return None;
            }
            id = first + i;
        }
        Some(id)
    }

    fn find_or_not_alive(&self, label: &Label, t: f64) -> Result<ParticleId> {
        self.find(label)
            .filter(|&id| self.record(id).alive_at(t))
            .ok_or_else(|| Error::NotAlive {
                label: label.to_string(),
                t,
            })
    }

    /// Ids of the particles alive at `t`, in storage order.
    pub fn alive_ids(&self, t: f64) -> Result<Vec<ParticleId>> {
        self.check_time(t)?;
        Ok(self
            .particles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive_at(t))
            .map(|(i, _)| i as ParticleId)
            .collect())
    }

    /// N(t) as labels in lexicographic order.
    pub fn alive_at(&self, t: f64) -> Result<Vec<Label>> {
        let mut labels: Vec<Label> = self.alive_ids(t)?.into_iter().map(|id| self.label(id)).collect();
        labels.sort();
        Ok(labels)
    }

    /// Ids from the root down to `id`.
    pub fn lineage(&self, id: ParticleId) -> Vec<ParticleId> {
        let mut ids = vec![id];
        let mut cur = id;
        while let Some(p) = self.record(cur).parent {
            ids.push(p);
            cur = p;
        }
        ids.reverse();
        ids
    }

    pub(crate) fn ancestry_path_of(&self, id: ParticleId, t: f64) -> Result<Path> {
        let mut lineage = self.lineage(id).into_iter().map(|i| self.record(i));
        let root = lineage.next().expect("lineage contains the particle itself");
        let mut path = root.path.restrict(root.birth, t.min(root.path.end()))?;
        for rec in lineage {
            let segment = rec.path.restrict(rec.birth, t.min(rec.path.end()))?;
            path.extend_with(&segment)?;
        }
        Ok(path)
    }

    /// X_u(s) for s in [0, t], stitched from the lifetimes of u's ancestors.
    pub fn ancestry_path(&self, label: &Label, t: f64) -> Result<Path> {
        self.check_time(t)?;
        let id = self.find_or_not_alive(label, t)?;
        self.ancestry_path_of(id, t)
    }

    /// Branching events on u's line of descent up to `t`: u's generation.
    pub fn births_along(&self, label: &Label, t: f64) -> Result<u32> {
        self.check_time(t)?;
        let id = self.find_or_not_alive(label, t)?;
        Ok(self.record(id).generation)
    }

    /// Newline-delimited `label,parent,birth,death,offspring` records in label order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "label,parent,birth,death,offspring")?;
        let mut rows: Vec<(Label, ParticleId)> = (0..self.particles.len() as ParticleId)
            .map(|id| (self.label(id), id))
            .collect();
        rows.sort();
        for (label, id) in rows {
            let rec = self.record(id);
            let parent = label.parent().map(|p| p.to_string()).unwrap_or_default();
            let death = rec.death.map(crate::fmt_f64).unwrap_or_default();
            let offspring = rec.offspring.map(|k| k.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{label},{parent},{},{death},{offspring}",
                crate::fmt_f64(rec.birth)
            )?;
        }
        Ok(())
    }
}
