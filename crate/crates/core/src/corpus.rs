//! A fixed collection of admissible membrane configurations used by the
//! verification suite.

use std::f64::consts::PI;

use serde::Serialize;

use crate::grid::Grid1D;
use crate::state::MembraneState;

/// One corpus state with the aspect ratio it is checked at.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusEntry {
    pub name: String,
    pub eps: f64,
    pub state: MembraneState,
}

type Profile = fn(f64) -> f64;

fn parabola(x: f64) -> f64 {
    1.0 - x * x
}

fn quartic(x: f64) -> f64 {
    (1.0 - x * x).powi(2)
}

fn cosine(x: f64) -> f64 {
    (PI * x / 2.0).cos()
}

fn tilted(x: f64) -> f64 {
    (1.0 - x * x) * (1.0 + 0.6 * x) / 1.2
}

fn tilted_back(x: f64) -> f64 {
    (1.0 - x * x) * (1.0 - 0.6 * x) / 1.2
}

fn twin(x: f64) -> f64 {
    (1.0 - x * x) * (0.4 + (PI * x).cos().powi(2)) / 1.4
}

fn flat_top(x: f64) -> f64 {
    1.0 - x.powi(8)
}

const SHAPES: [(&str, Profile); 7] = [
    ("parabola", parabola),
    ("quartic", quartic),
    ("cosine", cosine),
    ("tilted", tilted),
    ("tilted_back", tilted_back),
    ("twin", twin),
    ("flat_top", flat_top),
];

const EPS_CYCLE: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];

/// The bundled corpus: the rest state plus deflected pairs of varying
/// shape, depth and asymmetry. All entries are admissible with gap ≥ 0.1.
pub fn corpus(grid: Grid1D) -> Vec<CorpusEntry> {
    let mut out = vec![CorpusEntry {
        name: "rest".into(),
        eps: 0.1,
        state: MembraneState::rest(grid),
    }];
    let depths = [(0.2, 0.1), (0.45, 0.4), (0.1, 0.4)];
    let mut k = 0;
    for (ui, (uname, up)) in SHAPES.iter().enumerate() {
        for (di, &(a, b)) in depths.iter().enumerate() {
            let (lname, low) = SHAPES[(ui + di + 1) % SHAPES.len()];
            let (up, low) = (*up, low);
            let state = MembraneState::from_fns(grid, move |x| -a * up(x), move |x| -1.0 + b * low(x));
            out.push(CorpusEntry {
                name: format!("{uname}_{a}_over_{lname}_{b}"),
                eps: EPS_CYCLE[k % EPS_CYCLE.len()],
                state,
            });
            k += 1;
        }
    }
    out
}
