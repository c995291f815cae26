//! Canonical test models.
//!
//! * `M1` — single site, `β = 0`, `α = 1`, no jumps.  Everything has a closed
//!   Riccati form: `V_t θ = θ/(1+θt)`, `v_t = 1/t`, `c0 = 1`.
//! * `M2` — two symmetric sites with the same mechanism as M1 at each site;
//!   spatially constant data reduces to M1.
//! * `M3` — two genuinely inhomogeneous sites with a jump atom at site 0,
//!   calibrated to criticality.

use crate::model::{BranchingMechanism, Model, PiAtom, RateMatrix, StateSpace};

/// Single site, `m = {1}`, `Q = [0]`, `β = 0`, `α = 1`, `π` empty.
pub fn m1() -> Model {
    Model {
        space: StateSpace {
            labels: vec!["s1".into()],
            m: vec![1.0],
        },
        motion: RateMatrix {
            q: vec![vec![0.0]],
            kill: vec![0.0],
        },
        mech: BranchingMechanism {
            beta: vec![0.0],
            alpha: vec![1.0],
            pi: vec![vec![]],
        },
        critical: true,
    }
}

/// Two symmetric sites, `m = (1/2, 1/2)`, `Q = [[-1,1],[1,-1]]`, `β = 0`,
/// `α = (1,1)`, `π` empty.
pub fn m2() -> Model {
    Model {
        space: StateSpace {
            labels: vec!["s1".into(), "s2".into()],
            m: vec![0.5, 0.5],
        },
        motion: RateMatrix {
            q: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            kill: vec![0.0, 0.0],
        },
        mech: BranchingMechanism {
            beta: vec![0.0, 0.0],
            alpha: vec![1.0, 1.0],
            pi: vec![vec![], vec![]],
        },
        critical: true,
    }
}

/// M3 before calibration: `m = (1/2, 1/2)`, `Q = [[-2,2],[1,-1]]`,
/// `β = (0.1, -0.1)`, `α = (0.5, 1.5)`, one jump atom `(y=1, p=0.2)` at
/// site 0.
pub fn m3_raw() -> Model {
    Model {
        space: StateSpace {
            labels: vec!["s1".into(), "s2".into()],
            m: vec![0.5, 0.5],
        },
        motion: RateMatrix {
            q: vec![vec![-2.0, 2.0], vec![1.0, -1.0]],
            kill: vec![0.0, 0.0],
        },
        mech: BranchingMechanism {
            beta: vec![0.1, -0.1],
            alpha: vec![0.5, 1.5],
            pi: vec![vec![PiAtom { y: 1.0, p: 0.2 }], vec![]],
        },
        critical: false,
    }
}

/// M3 calibrated to criticality.
pub fn m3() -> Model {
    crate::spectral::calibrate_critical(&m3_raw()).expect("M3 calibration")
}

/// Single site with a pure-jump mechanism `α = 0`, `π = {(1, 1)}`.
/// `Ψ0` grows linearly, so the extinction condition fails; used to exercise
/// the Grey check and atom-sum arithmetic.
pub fn single_site_jump() -> Model {
    custom_single_site(0.0, 0.0, &[(1.0, 1.0)])
}

/// Ad-hoc one-site model for mechanism property tests.
pub fn custom_single_site(beta: f64, alpha: f64, atoms: &[(f64, f64)]) -> Model {
    Model {
        space: StateSpace {
            labels: vec!["s1".into()],
            m: vec![1.0],
        },
        motion: RateMatrix {
            q: vec![vec![0.0]],
            kill: vec![0.0],
        },
        mech: BranchingMechanism {
            beta: vec![beta],
            alpha: vec![alpha],
            pi: vec![atoms.iter().map(|&(y, p)| PiAtom { y, p }).collect()],
        },
        critical: false,
    }
}
