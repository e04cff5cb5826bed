//! Phone carriage states and pose angles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseCarriageError {
    #[error("unknown posture `{0}` (expected standing or sitting)")]
    Posture(String),
    #[error("unknown holding position `{0}`")]
    Holding(String),
    #[error("malformed carriage state `{0}` (expected <posture>_<holding>)")]
    Malformed(String),
    #[error("malformed carriage pair `{0}` (expected <state>|<state>)")]
    Pair(String),
    #[error("pose angle {0} is not a multiple of 45 degrees in [0, 315]")]
    Angle(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Posture {
    Standing,
    Sitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Holding {
    Hand,
    FrontPantsPocket,
    BackPantsPocket,
    ShirtPocket,
    Bag,
}

impl Posture {
    pub fn as_str(self) -> &'static str {
        match self {
            Posture::Standing => "standing",
            Posture::Sitting => "sitting",
        }
    }
}

impl Holding {
    pub const ALL: [Holding; 5] = [
        Holding::Hand,
        Holding::FrontPantsPocket,
        Holding::BackPantsPocket,
        Holding::ShirtPocket,
        Holding::Bag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Holding::Hand => "hand",
            Holding::FrontPantsPocket => "front_pants_pocket",
            Holding::BackPantsPocket => "back_pants_pocket",
            Holding::ShirtPocket => "shirt_pocket",
            Holding::Bag => "bag",
        }
    }
}

fn normalize_token(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| {
            if c == '-' || c == ' ' || c == '/' || c == ':' {
                '_'
            } else {
                c
            }
        })
        .collect()
}

impl FromStr for Posture {
    type Err = ParseCarriageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "standing" | "stand" => Ok(Posture::Standing),
            "sitting" | "sit" | "seated" => Ok(Posture::Sitting),
            _ => Err(ParseCarriageError::Posture(s.to_string())),
        }
    }
}

impl FromStr for Holding {
    type Err = ParseCarriageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "hand" | "in_hand" => Ok(Holding::Hand),
            "front_pants_pocket" | "front_pocket" | "pants_pocket" | "front_pants" | "pants" => {
                Ok(Holding::FrontPantsPocket)
            }
            "back_pants_pocket" | "back_pocket" | "back_pants" => Ok(Holding::BackPantsPocket),
            "shirt_pocket" | "front_shirt_pocket" | "shirt" => Ok(Holding::ShirtPocket),
            "bag" | "purse" | "backpack" => Ok(Holding::Bag),
            _ => Err(ParseCarriageError::Holding(s.to_string())),
        }
    }
}

/// How one user carries their phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CarriageState {
    pub posture: Posture,
    pub holding: Holding,
}

impl CarriageState {
    pub const fn new(posture: Posture, holding: Holding) -> Self {
        Self { posture, holding }
    }
}

impl fmt::Display for CarriageState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.posture.as_str(), self.holding.as_str())
    }
}

impl FromStr for CarriageState {
    type Err = ParseCarriageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s);
        let (posture, rest) = norm
            .split_once('_')
            .ok_or_else(|| ParseCarriageError::Malformed(s.to_string()))?;
        Ok(Self {
            posture: posture.parse()?,
            holding: rest.parse()?,
        })
    }
}

impl From<CarriageState> for String {
    fn from(c: CarriageState) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for CarriageState {
    type Error = ParseCarriageError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Carriage states of both phones in a link (user 1 rotates, user 2 is stationary).
///
/// Text form is `<user1>|<user2>`, e.g. `standing_hand|sitting_hand`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CarriagePair {
    pub user1: CarriageState,
    pub user2: CarriageState,
}

impl CarriagePair {
    pub const fn new(user1: CarriageState, user2: CarriageState) -> Self {
        Self { user1, user2 }
    }

    /// The six pairings of the reference measurement campaign.
    pub fn campaign_pairs() -> [CarriagePair; 6] {
        use Holding::*;
        use Posture::*;
        let s = CarriageState::new;
        [
            CarriagePair::new(s(Standing, Bag), s(Sitting, Hand)),
            CarriagePair::new(s(Standing, ShirtPocket), s(Standing, Hand)),
            CarriagePair::new(s(Standing, FrontPantsPocket), s(Sitting, ShirtPocket)),
            CarriagePair::new(s(Standing, Hand), s(Standing, FrontPantsPocket)),
            CarriagePair::new(s(Standing, FrontPantsPocket), s(Standing, FrontPantsPocket)),
            CarriagePair::new(s(Sitting, Hand), s(Sitting, Hand)),
        ]
    }
}

impl fmt::Display for CarriagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.user1, self.user2)
    }
}

impl FromStr for CarriagePair {
    type Err = ParseCarriageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('|')
            .ok_or_else(|| ParseCarriageError::Pair(s.to_string()))?;
        Ok(Self {
            user1: a.parse()?,
            user2: b.parse()?,
        })
    }
}

impl From<CarriagePair> for String {
    fn from(c: CarriagePair) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for CarriagePair {
    type Error = ParseCarriageError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Rotation of a phone carrier relative to the line of sight, on a 45° grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub struct PoseAngle(u16);

impl PoseAngle {
    pub const ZERO: PoseAngle = PoseAngle(0);

    pub fn new(degrees: i64) -> Result<Self, ParseCarriageError> {
        if (0..360).contains(&degrees) && degrees % 45 == 0 {
            Ok(PoseAngle(degrees as u16))
        } else {
            Err(ParseCarriageError::Angle(degrees))
        }
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    /// Position on the grid, 0..8.
    pub fn index(self) -> usize {
        (self.0 / 45) as usize
    }

    pub fn all() -> impl Iterator<Item = PoseAngle> {
        (0..8u16).map(|i| PoseAngle(i * 45))
    }
}

impl fmt::Display for PoseAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<PoseAngle> for u16 {
    fn from(a: PoseAngle) -> Self {
        a.0
    }
}

impl TryFrom<u16> for PoseAngle {
    type Error = ParseCarriageError;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        PoseAngle::new(v as i64)
    }
}
