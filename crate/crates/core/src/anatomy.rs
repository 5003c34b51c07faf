//! Anatomical location and organ identifiers shared by the labeler, the
//! phantom generator and the ground-truth builder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Where a finding sits, as resolved from report text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    RightLung,
    LeftLung,
    LungUnspecified,
    Heart,
    GreatVessel,
    Mediastinum,
    Other,
}

impl Location {
    pub const ALL: [Location; 7] = [
        Location::RightLung,
        Location::LeftLung,
        Location::LungUnspecified,
        Location::Heart,
        Location::GreatVessel,
        Location::Mediastinum,
        Location::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Location::RightLung => "right_lung",
            Location::LeftLung => "left_lung",
            Location::LungUnspecified => "lung_unspecified",
            Location::Heart => "heart",
            Location::GreatVessel => "great_vessel",
            Location::Mediastinum => "mediastinum",
            Location::Other => "other",
        }
    }

    pub fn is_lung(self) -> bool {
        matches!(
            self,
            Location::RightLung | Location::LeftLung | Location::LungUnspecified
        )
    }

    /// Organ masks whose union is the allowed region for this location.
    /// `None` means unconstrained (the whole grid).
    pub fn organs(self) -> Option<&'static [Organ]> {
        match self {
            Location::RightLung => Some(&[Organ::RightLung]),
            Location::LeftLung => Some(&[Organ::LeftLung]),
            Location::LungUnspecified => Some(&[Organ::RightLung, Organ::LeftLung]),
            Location::Heart | Location::GreatVessel | Location::Mediastinum => {
                Some(&[Organ::Mediastinum])
            }
            Location::Other => None,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Location {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Location::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "location",
                name: s.to_string(),
            })
    }
}

/// Segmentable organ compartments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    RightLung,
    LeftLung,
    /// Both lungs before the left/right split.
    Lungs,
    Mediastinum,
    Unspecified,
}

impl Organ {
    pub fn as_str(self) -> &'static str {
        match self {
            Organ::RightLung => "right_lung",
            Organ::LeftLung => "left_lung",
            Organ::Lungs => "lungs",
            Organ::Mediastinum => "mediastinum",
            Organ::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for Organ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
