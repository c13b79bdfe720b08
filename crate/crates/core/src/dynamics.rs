//! Traction-scaled unicycle kinematics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::traction::{Traction, TractionRealizationMap};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    /// Heading in radians; never wrapped.
    pub yaw: f64,
}

impl State {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    /// Linear velocity command, m/s.
    pub v: f64,
    /// Angular velocity command, rad/s.
    pub omega: f64,
}

impl Control {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

pub type ControlSequence = Vec<Control>;

/// Symmetric box limits on the commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            v_max: 3.0,
            omega_max: std::f64::consts::PI,
        }
    }
}

impl ControlLimits {
    #[inline]
    pub fn clamp(&self, u: Control) -> Control {
        Control {
            v: u.v.clamp(-self.v_max, self.v_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    pub fn contains(&self, u: Control) -> bool {
        u.v.abs() <= self.v_max && u.omega.abs() <= self.omega_max
    }
}

/// Anything that can report traction at a world position.
pub trait TractionField {
    fn traction(&self, x: f64, y: f64) -> Traction;
}

impl TractionField for TractionRealizationMap {
    #[inline]
    fn traction(&self, x: f64, y: f64) -> Traction {
        self.traction_at(x, y)
    }
}

/// The same traction everywhere (no map bounds).
#[derive(Debug, Clone, Copy)]
pub struct UniformTraction(pub Traction);

impl TractionField for UniformTraction {
    fn traction(&self, _x: f64, _y: f64) -> Traction {
        self.0
    }
}

impl<F: Fn(f64, f64) -> Traction> TractionField for F {
    fn traction(&self, x: f64, y: f64) -> Traction {
        self(x, y)
    }
}

/// Forward-Euler unicycle with multiplicative traction on each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unicycle {
    pub dt: f64,
    pub limits: ControlLimits,
}

impl Default for Unicycle {
    fn default() -> Self {
        Self {
            dt: 0.1,
            limits: ControlLimits::default(),
        }
    }
}

impl Unicycle {
    pub fn new(dt: f64, limits: ControlLimits) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        Self { dt, limits }
    }

    #[inline]
    pub fn step(&self, state: State, control: Control, traction: Traction) -> State {
        let u = self.limits.clamp(control);
        let (sin, cos) = state.yaw.sin_cos();
        let v = self.dt * traction.linear * u.v;
        State {
            x: state.x + v * cos,
            y: state.y + v * sin,
            yaw: state.yaw + self.dt * traction.angular * u.omega,
        }
    }

    /// Applies `controls` in order, querying traction at each current state.
    pub fn rollout<F: TractionField + ?Sized>(
        &self,
        initial: State,
        controls: &[Control],
        field: &F,
    ) -> Trajectory {
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut s = initial;
        states.push(s);
        for &u in controls {
            s = self.step(s, u, field.traction(s.x, s.y));
            states.push(s);
        }
        Trajectory {
            states,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub dt: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("trajectory holds the initial state")
    }

    /// `t,x,y,yaw` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,y,yaw")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(out, "{},{},{},{}", i as f64 * self.dt, s.x, s.y, s.yaw)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }
}
