//! Time integration, continuation and cross-method comparison.

pub mod compare;
pub mod gamma;
pub mod hb;
pub mod integrate;

/// Bifurcation tag of a continuation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointTag {
    None,
    /// Saddle-node fold: the continuation parameter reverses along the branch.
    Sn,
    /// Pitchfork candidate: a real Floquet multiplier crosses +1 off a fold.
    Pf,
    /// Neimark-Sacker candidate: a complex multiplier pair leaves the unit circle.
    NsCandidate,
}

impl PointTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointTag::None => "none",
            PointTag::Sn => "SN",
            PointTag::Pf => "PF",
            PointTag::NsCandidate => "NS-candidate",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "none" => PointTag::None,
            "SN" => PointTag::Sn,
            "PF" => PointTag::Pf,
            "NS-candidate" => PointTag::NsCandidate,
            _ => return None,
        })
    }
}

/// One point of a continuation branch.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    /// Oscillation or forcing angular frequency.
    pub omega: f64,
    /// Max displacement amplitude over one period, per master.
    pub amplitude: Vec<f64>,
    pub stable: bool,
    pub tag: PointTag,
}

/// Continuation branch in arclength order.
#[derive(Debug, Clone)]
pub struct Curve {
    pub method: String,
    pub masters: Vec<usize>,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn max_amplitude(&self) -> f64 {
        self.points
            .iter()
            .flat_map(|p| p.amplitude.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn count_tag(&self, tag: PointTag) -> usize {
        self.points.iter().filter(|p| p.tag == tag).count()
    }
}
