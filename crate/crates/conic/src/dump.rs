use serde::Serialize;

use crate::program::{BlockKind, ConicProgram, EllipsoidRadius};

#[derive(Debug, Serialize)]
pub struct BlockDump {
    pub name: String,
    pub kind: BlockKind,
    pub dim: usize,
    pub scalars: usize,
}

#[derive(Debug, Serialize)]
pub struct EqualityDump {
    pub label: String,
    pub terms: usize,
    pub rhs: f64,
}

#[derive(Debug, Serialize)]
pub struct PsdDump {
    pub name: String,
    pub dim: usize,
    /// number of nonempty cells
    pub cells: usize,
}

#[derive(Debug, Serialize)]
pub struct EllipsoidDump {
    pub block: String,
    pub dim: usize,
    pub pinned: usize,
    pub radius: EllipsoidRadius,
}

/// Human-readable summary of a program for debugging.
#[derive(Debug, Serialize)]
pub struct ProgramDump {
    pub blocks: Vec<BlockDump>,
    pub objective_terms: usize,
    pub objective_constant: f64,
    pub equalities: Vec<EqualityDump>,
    pub psd: Vec<PsdDump>,
    pub ellipsoid: Option<EllipsoidDump>,
}

impl ProgramDump {
    pub fn new(p: &ConicProgram) -> Self {
        ProgramDump {
            blocks: p
                .blocks
                .iter()
                .map(|b| BlockDump { name: b.name.clone(), kind: b.kind, dim: b.dim, scalars: b.scalar_count() })
                .collect(),
            objective_terms: p.objective.terms.len(),
            objective_constant: p.objective.constant.re,
            equalities: p
                .equalities
                .iter()
                .map(|e| EqualityDump { label: e.label.clone(), terms: e.lhs.terms.len(), rhs: e.rhs })
                .collect(),
            psd: p
                .psd
                .iter()
                .map(|b| PsdDump {
                    name: b.name.clone(),
                    dim: b.dim,
                    cells: b.cells.values().filter(|c| !c.terms.is_empty() || c.constant.norm() != 0.0).count(),
                })
                .collect(),
            ellipsoid: p.ellipsoid.as_ref().map(|(id, e)| EllipsoidDump {
                block: p.block(*id).name.clone(),
                dim: e.dim(),
                pinned: e.pinned_directions(),
                radius: e.radius(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump serializes")
    }
}
