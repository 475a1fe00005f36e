//! Demographic and technical-skill labels attached to each subject.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelName {
    AgeGroup,
    Gender,
    Education,
    Faculty,
    Smokes,
    SetupNewOs,
    SetupWifi,
    WroteProgram,
    FormattedComputer,
    BuiltWebsite,
}

const EXPERIENCE: &[&str] = &["Never", "Basic Experience", "Hands-On Experience"];

impl LabelName {
    pub const COUNT: usize = 10;

    pub const ALL: [LabelName; LabelName::COUNT] = [
        LabelName::AgeGroup,
        LabelName::Gender,
        LabelName::Education,
        LabelName::Faculty,
        LabelName::Smokes,
        LabelName::SetupNewOs,
        LabelName::SetupWifi,
        LabelName::WroteProgram,
        LabelName::FormattedComputer,
        LabelName::BuiltWebsite,
    ];

    /// Column name used in CSV files.
    pub fn column(self) -> &'static str {
        match self {
            LabelName::AgeGroup => "age_group",
            LabelName::Gender => "gender",
            LabelName::Education => "education",
            LabelName::Faculty => "faculty",
            LabelName::Smokes => "smokes",
            LabelName::SetupNewOs => "setup_new_os",
            LabelName::SetupWifi => "setup_wifi",
            LabelName::WroteProgram => "wrote_program",
            LabelName::FormattedComputer => "formatted_computer",
            LabelName::BuiltWebsite => "built_website",
        }
    }

    /// Human-readable name used in reports.
    pub fn title(self) -> &'static str {
        match self {
            LabelName::AgeGroup => "Age Group",
            LabelName::Gender => "Gender",
            LabelName::Education => "Education",
            LabelName::Faculty => "Faculty",
            LabelName::Smokes => "Smokes",
            LabelName::SetupNewOs => "Setup new OS",
            LabelName::SetupWifi => "Setup a Wi-Fi Network",
            LabelName::WroteProgram => "Wrote a Program",
            LabelName::FormattedComputer => "Formatted a Computer",
            LabelName::BuiltWebsite => "Built a Website",
        }
    }

    pub fn classes(self) -> &'static [&'static str] {
        match self {
            LabelName::AgeGroup => &["18-24", "25-30", "31+"],
            LabelName::Gender => &["Male", "Female"],
            LabelName::Education => &["Higher Education", "High-School"],
            LabelName::Faculty => &["Natural Sciences", "Humanities", "Engineering"],
            LabelName::Smokes => &["Yes", "No"],
            _ => EXPERIENCE,
        }
    }

    /// Index of `class` in [`Self::classes`]. Case, hyphens and repeated
    /// spaces are ignored, so `hands on experience` matches.
    pub fn class_index(self, class: &str) -> Option<usize> {
        let wanted = normalize(class);
        self.classes().iter().position(|c| normalize(c) == wanted)
    }

    fn position(self) -> usize {
        LabelName::ALL.iter().position(|l| *l == self).expect("listed")
    }
}

fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split(|c: char| c.is_whitespace() || c == '-').filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().map(|c| c.to_ascii_lowercase()));
    }
    out
}

impl fmt::Display for LabelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("`{class}` is not a class of {label}")]
    UnknownClass { label: LabelName, class: String },
    #[error("missing value for {0}")]
    Missing(LabelName),
}

impl FromStr for LabelName {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = normalize(&s.replace('_', " "));
        LabelName::ALL
            .into_iter()
            .find(|l| normalize(&l.column().replace('_', " ")) == wanted || normalize(l.title()) == wanted)
            .ok_or_else(|| LabelError::UnknownLabel(s.to_string()))
    }
}

/// One class per label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabelSet {
    classes: [u8; LabelName::COUNT],
}

impl LabelSet {
    /// Builds a label set from `(label, class string)` pairs covering every
    /// label.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<LabelSet, LabelError>
    where
        I: IntoIterator<Item = (LabelName, &'a str)>,
    {
        let mut classes = [u8::MAX; LabelName::COUNT];
        for (label, class) in pairs {
            let idx = label
                .class_index(class)
                .ok_or_else(|| LabelError::UnknownClass { label, class: class.to_string() })?;
            classes[label.position()] = idx as u8;
        }
        if let Some(pos) = classes.iter().position(|c| *c == u8::MAX) {
            return Err(LabelError::Missing(LabelName::ALL[pos]));
        }
        Ok(LabelSet { classes })
    }

    /// Builds from class indices in [`LabelName::ALL`] order.
    pub fn from_indices(indices: [usize; LabelName::COUNT]) -> Result<LabelSet, LabelError> {
        let mut classes = [0u8; LabelName::COUNT];
        for ((slot, idx), label) in classes.iter_mut().zip(indices).zip(LabelName::ALL) {
            if idx >= label.classes().len() {
                return Err(LabelError::UnknownClass { label, class: idx.to_string() });
            }
            *slot = idx as u8;
        }
        Ok(LabelSet { classes })
    }

    pub fn index(&self, label: LabelName) -> usize {
        usize::from(self.classes[label.position()])
    }

    pub fn class(&self, label: LabelName) -> &'static str {
        label.classes()[self.index(label)]
    }

    pub fn with(mut self, label: LabelName, class_index: usize) -> LabelSet {
        assert!(class_index < label.classes().len(), "class index out of range");
        self.classes[label.position()] = class_index as u8;
        self
    }
}
