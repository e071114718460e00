use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Borehole,
    Piston,
    Wingweight,
    Otlcircuit,
}

/// How missingness is induced under the not-at-random mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnarKind {
    Threshold,
    Logistic,
}

const BOREHOLE_THETA: [(f64, f64); 4] = [(990.0, 1110.0), (0.074, 1.12), (0.05, 0.5), (-0.5, 0.5)];
const BOREHOLE_X: [(f64, f64); 2] = [(700.0, 820.0), (0.05, 0.5)];

// k, P0, Ta | M, S, V0, T0
const PISTON_THETA: [(f64, f64); 3] = [(1000.0, 5000.0), (90000.0, 110000.0), (290.0, 296.0)];
const PISTON_X: [(f64, f64); 4] = [(30.0, 60.0), (0.005, 0.02), (0.0002, 0.01), (340.0, 360.0)];

// A, Lambda (degrees), q, lambda | Sw, Wfw, tc, Nz, Wdg, Wp
const WING_THETA: [(f64, f64); 4] = [(6.0, 10.0), (-10.0, 10.0), (16.0, 45.0), (0.5, 1.0)];
const WING_X: [(f64, f64); 6] = [
    (150.0, 200.0),
    (220.0, 300.0),
    (0.08, 0.18),
    (2.5, 6.0),
    (1700.0, 2500.0),
    (0.025, 0.08),
];

// Rf, beta | Rb1, Rb2, Rc1, Rc2
const OTL_THETA: [(f64, f64); 2] = [(0.5, 3.0), (50.0, 300.0)];
const OTL_X: [(f64, f64); 4] = [(50.0, 150.0), (25.0, 70.0), (1.2, 2.5), (0.25, 1.2)];

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [
        TestFunction::Borehole,
        TestFunction::Piston,
        TestFunction::Wingweight,
        TestFunction::Otlcircuit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Borehole => "borehole",
            TestFunction::Piston => "piston",
            TestFunction::Wingweight => "wingweight",
            TestFunction::Otlcircuit => "otlcircuit",
        }
    }

    pub fn theta_ranges(self) -> &'static [(f64, f64)] {
        match self {
            TestFunction::Borehole => &BOREHOLE_THETA,
            TestFunction::Piston => &PISTON_THETA,
            TestFunction::Wingweight => &WING_THETA,
            TestFunction::Otlcircuit => &OTL_THETA,
        }
    }

    pub fn x_ranges(self) -> &'static [(f64, f64)] {
        match self {
            TestFunction::Borehole => &BOREHOLE_X,
            TestFunction::Piston => &PISTON_X,
            TestFunction::Wingweight => &WING_X,
            TestFunction::Otlcircuit => &OTL_X,
        }
    }

    pub fn d(self) -> usize {
        self.theta_ranges().len()
    }

    pub fn p(self) -> usize {
        self.x_ranges().len()
    }

    pub fn mnar_kind(self) -> MnarKind {
        match self {
            TestFunction::Borehole | TestFunction::Wingweight => MnarKind::Threshold,
            TestFunction::Piston | TestFunction::Otlcircuit => MnarKind::Logistic,
        }
    }

    /// Map a point of the unit cube onto the parameter ranges.
    pub fn scale_theta(self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.theta_ranges())
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    /// Evaluate at physical parameter and location values.
    pub fn eval(self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_ranges(self.name(), "theta", theta, self.theta_ranges())?;
        check_ranges(self.name(), "x", x, self.x_ranges())?;
        Ok(match self {
            TestFunction::Borehole => borehole(theta, x),
            TestFunction::Piston => piston(theta, x),
            TestFunction::Wingweight => wingweight(theta, x),
            TestFunction::Otlcircuit => otlcircuit(theta, x),
        })
    }

    /// Evaluate with the parameter given on the unit cube.
    pub fn eval_unit(self, unit_theta: &[f64], x: &[f64]) -> Result<f64> {
        self.eval(&self.scale_theta(unit_theta), x)
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown test function {s:?}")))
    }
}

fn check_ranges(name: &str, what: &str, v: &[f64], ranges: &[(f64, f64)]) -> Result<()> {
    if v.len() != ranges.len() {
        return Err(Error::Dimension(format!(
            "{name} expects {} {what} values, got {}",
            ranges.len(),
            v.len()
        )));
    }
    for (i, (val, (lo, hi))) in v.iter().zip(ranges).enumerate() {
        let slack = 1e-9 * (hi - lo);
        if !(*val >= lo - slack && *val <= hi + slack) {
            return Err(Error::InvalidInput(format!(
                "{name} {what}[{i}] = {val} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn borehole(t: &[f64], x: &[f64]) -> f64 {
    2.0 * PI * (t[0] - x[0]) / (2.0 * t[1] / (x[1] * x[1]) + t[2]) * (t[3] * x[1]).exp()
}

fn piston(t: &[f64], x: &[f64]) -> f64 {
    let (k, p0, ta) = (t[0], t[1], t[2]);
    let (m, s, v0, t0) = (x[0], x[1], x[2], x[3]);
    let a = p0 * s + 19.62 * m - k * v0 / s;
    let v = s / (2.0 * k) * ((a * a + 4.0 * k * p0 * v0 / t0 * ta).sqrt() - a);
    2.0 * PI * (m / (k + s * s * p0 * v0 / t0 * ta / (v * v))).sqrt()
}

fn wingweight(t: &[f64], x: &[f64]) -> f64 {
    let (a, sweep, q, taper) = (t[0], t[1].to_radians(), t[2], t[3]);
    let (sw, wfw, tc, nz, wdg, wp) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let c = sweep.cos();
    0.036
        * sw.powf(0.758)
        * wfw.powf(0.0035)
        * (a / (c * c)).powf(0.6)
        * q.powf(0.006)
        * taper.powf(0.04)
        * (100.0 * tc / c).powf(-0.3)
        * (nz * wdg).powf(0.49)
        + sw * wp
}

fn otlcircuit(t: &[f64], x: &[f64]) -> f64 {
    let (rf, beta) = (t[0], t[1]);
    let (rb1, rb2, rc1, rc2) = (x[0], x[1], x[2], x[3]);
    let vb1 = 12.0 * rb2 / (rb1 + rb2);
    let b = beta * (rc2 + 9.0);
    (vb1 + 0.74) * b / (b + rf) + 11.35 * rf / (b + rf) + 0.74 * rf * b / ((b + rf) * rc1)
}
