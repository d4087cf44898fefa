//! The closed set of 51 state identifiers (50 states plus DC).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! states {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Two-letter postal code of a U.S. state or the District of Columbia.
        ///
        /// Variants are declared in alphabetical order of their codes, so the derived
        /// `Ord` is the alphabetical tie-break used throughout the crate.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum StateId {
            $($variant),+
        }

        impl StateId {
            pub const ALL: [StateId; 51] = [$(StateId::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $(StateId::$variant => stringify!($variant)),+
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(StateId::$variant => $name),+
                }
            }
        }
    };
}

states! {
    AK => "Alaska",
    AL => "Alabama",
    AR => "Arkansas",
    AZ => "Arizona",
    CA => "California",
    CO => "Colorado",
    CT => "Connecticut",
    DC => "District of Columbia",
    DE => "Delaware",
    FL => "Florida",
    GA => "Georgia",
    HI => "Hawaii",
    IA => "Iowa",
    ID => "Idaho",
    IL => "Illinois",
    IN => "Indiana",
    KS => "Kansas",
    KY => "Kentucky",
    LA => "Louisiana",
    MA => "Massachusetts",
    MD => "Maryland",
    ME => "Maine",
    MI => "Michigan",
    MN => "Minnesota",
    MO => "Missouri",
    MS => "Mississippi",
    MT => "Montana",
    NC => "North Carolina",
    ND => "North Dakota",
    NE => "Nebraska",
    NH => "New Hampshire",
    NJ => "New Jersey",
    NM => "New Mexico",
    NV => "Nevada",
    NY => "New York",
    OH => "Ohio",
    OK => "Oklahoma",
    OR => "Oregon",
    PA => "Pennsylvania",
    RI => "Rhode Island",
    SC => "South Carolina",
    SD => "South Dakota",
    TN => "Tennessee",
    TX => "Texas",
    UT => "Utah",
    VA => "Virginia",
    VT => "Vermont",
    WA => "Washington",
    WI => "Wisconsin",
    WV => "West Virginia",
    WY => "Wyoming",
}

impl StateId {
    /// Position in [`StateId::ALL`]; stable and alphabetical.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown state code {0:?}")]
pub struct UnknownState(pub String);

impl FromStr for StateId {
    type Err = UnknownState;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim();
        StateId::ALL
            .iter()
            .copied()
            .find(|st| st.code().eq_ignore_ascii_case(code) || st.name().eq_ignore_ascii_case(code))
            .ok_or_else(|| UnknownState(code.to_string()))
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}
