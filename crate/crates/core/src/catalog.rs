//! The closed pool of UI control kinds and the parameterized control specs
//! built from them.
//!
//! Every recommendation the engine emits must name one of the eight
//! [`ControlKind`]s. Free-text control names coming back from a model are
//! canonicalized through [`parse_kind`], which consults an explicit synonym
//! table rather than fuzzy matching.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag of the synonym table shipped in [`ControlCatalog::to_json`].
pub const SYNONYM_TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown control: {0:?}")]
pub struct UnknownControl(pub String);

/// One of the eight control kinds in the candidate pool.
///
/// The derived ordering is catalog order, which is used for every
/// deterministic tie-break in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Slider,
    TextField,
    Dropdown,
    RadioButtons,
    PresetButtons,
    ColorWheel,
    ColorPicker,
    DirectClick,
}

impl ControlKind {
    pub const ALL: [ControlKind; 8] = [
        ControlKind::Slider,
        ControlKind::TextField,
        ControlKind::Dropdown,
        ControlKind::RadioButtons,
        ControlKind::PresetButtons,
        ControlKind::ColorWheel,
        ControlKind::ColorPicker,
        ControlKind::DirectClick,
    ];

    /// Stable identifier used in every file format and on the wire.
    pub fn id(self) -> &'static str {
        match self {
            ControlKind::Slider => "slider",
            ControlKind::TextField => "text_field",
            ControlKind::Dropdown => "dropdown",
            ControlKind::RadioButtons => "radio_buttons",
            ControlKind::PresetButtons => "preset_buttons",
            ControlKind::ColorWheel => "color_wheel",
            ControlKind::ColorPicker => "color_picker",
            ControlKind::DirectClick => "direct_click",
        }
    }

    /// Human-facing name, as used in prompts and generated code envelopes.
    pub fn canonical_name(self) -> &'static str {
        match self {
            ControlKind::Slider => "Slider",
            ControlKind::TextField => "Text Field",
            ControlKind::Dropdown => "Dropdown",
            ControlKind::RadioButtons => "Radio Buttons",
            ControlKind::PresetButtons => "Preset Buttons",
            ControlKind::ColorWheel => "Color Wheel",
            ControlKind::ColorPicker => "Color Picker",
            ControlKind::DirectClick => "Direct Click",
        }
    }

    pub fn synonyms(self) -> &'static [&'static str] {
        match self {
            ControlKind::Slider => &["range slider"],
            ControlKind::TextField => &["text box", "text input", "number field"],
            ControlKind::Dropdown => &[
                "drop-down menu",
                "dropdown menu",
                "drop-down",
                "select menu",
            ],
            ControlKind::RadioButtons => &["radio button", "radio"],
            ControlKind::PresetButtons => &[
                "preset buttons with preview overlays",
                "preset buttons with visual overlays",
                "preset button",
                "presets",
            ],
            ControlKind::ColorWheel => &["colour wheel", "hue wheel"],
            ControlKind::ColorPicker => &["colour picker"],
            ControlKind::DirectClick => &[
                "clicking",
                "click on image",
                "clicking on the image",
                "direct manipulation",
            ],
        }
    }

    /// Which value domains this kind may be parameterized with.
    pub fn domain_class(self) -> DomainClass {
        match self {
            ControlKind::Slider | ControlKind::TextField => DomainClass::Numeric,
            ControlKind::Dropdown | ControlKind::RadioButtons => DomainClass::Discrete,
            ControlKind::PresetButtons => DomainClass::Any,
            ControlKind::ColorWheel | ControlKind::ColorPicker => DomainClass::Color,
            ControlKind::DirectClick => DomainClass::Position,
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ControlKind {
    type Err = UnknownControl;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_kind(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainClass {
    /// Continuous, or discrete with numeric options.
    Numeric,
    Discrete,
    Color,
    Position,
    Any,
}

fn fold(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' ' | '\t'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Canonicalizes a free-text control name.
///
/// Matching ignores case, hyphens, spaces and underscores. Anything that is
/// neither a kind id, a canonical name nor a declared synonym is rejected;
/// "stepper input" is deliberately not a synonym of anything.
pub fn parse_kind(name: &str) -> Result<ControlKind, UnknownControl> {
    let folded = fold(name.trim());
    if folded.is_empty() {
        return Err(UnknownControl(name.to_string()));
    }
    ControlKind::ALL
        .into_iter()
        .find(|kind| {
            fold(kind.id()) == folded
                || fold(kind.canonical_name()) == folded
                || kind.synonyms().iter().any(|s| fold(s) == folded)
        })
        .ok_or_else(|| UnknownControl(name.to_string()))
}

/// The ordered candidate pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlCatalog {
    kinds: Vec<ControlKind>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CatalogEntry {
    pub kind: ControlKind,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
    pub value_domain_class: DomainClass,
}

impl ControlCatalog {
    pub fn kinds(&self) -> &[ControlKind] {
        &self.kinds
    }

    pub fn contains(&self, kind: ControlKind) -> bool {
        self.kinds.contains(&kind)
    }

    /// Membership test by name, using the same canonicalization as [`parse_kind`].
    pub fn contains_name(&self, name: &str) -> bool {
        parse_kind(name).map(|k| self.contains(k)).unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn entries(&self) -> Vec<CatalogEntry> {
        self.kinds
            .iter()
            .map(|&kind| CatalogEntry {
                kind,
                canonical_name: kind.canonical_name().to_string(),
                synonyms: kind.synonyms().iter().map(|s| s.to_string()).collect(),
                value_domain_class: kind.domain_class(),
            })
            .collect()
    }

    /// `catalog.json`: an array of entries in catalog order.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.entries()).expect("catalog serializes");
        out.push('\n');
        out
    }
}

impl Default for ControlCatalog {
    fn default() -> Self {
        default_catalog()
    }
}

pub fn default_catalog() -> ControlCatalog {
    ControlCatalog {
        kinds: ControlKind::ALL.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Control specs
// ---------------------------------------------------------------------------

/// An option of a discrete value domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiscreteOption {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueDomain {
    Continuous {
        min: f64,
        max: f64,
        step: f64,
    },
    Discrete {
        options: Vec<DiscreteOption>,
    },
    /// Any `#rrggbb` color.
    Color,
    /// Normalized coordinates in the unit square.
    Position,
}

impl ValueDomain {
    fn is_numeric(&self) -> bool {
        match self {
            ValueDomain::Continuous { .. } => true,
            ValueDomain::Discrete { options } => options
                .iter()
                .all(|o| matches!(o, DiscreteOption::Number(_))),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub value: serde_json::Value,
    pub caption: String,
    /// Opaque rendering hint; never interpreted by the engine.
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub kind: ControlKind,
    pub label: String,
    pub parameter: String,
    pub value_domain: ValueDomain,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<Preset>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecViolation {
    RangeInverted,
    NonPositiveStep,
    StepExceedsRange,
    NonFiniteBound,
    EmptyOptions,
    DuplicateOption(String),
    TooFewPresets(usize),
    UnexpectedPresets(usize),
    IncompatibleDomain {
        kind: ControlKind,
        domain: &'static str,
    },
    EmptyParameter,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::RangeInverted => f.write_str("min < max"),
            SpecViolation::NonPositiveStep => f.write_str("step > 0"),
            SpecViolation::StepExceedsRange => f.write_str("step <= max - min"),
            SpecViolation::NonFiniteBound => f.write_str("bounds must be finite"),
            SpecViolation::EmptyOptions => f.write_str("option list non-empty"),
            SpecViolation::DuplicateOption(o) => write!(f, "options unique (duplicate {o})"),
            SpecViolation::TooFewPresets(n) => write!(f, ">= 2 presets (got {n})"),
            SpecViolation::UnexpectedPresets(n) => {
                write!(f, "only preset_buttons carry presets (got {n})")
            }
            SpecViolation::IncompatibleDomain { kind, domain } => {
                write!(f, "{kind} cannot use a {domain} value domain")
            }
            SpecViolation::EmptyParameter => f.write_str("parameter non-empty"),
        }
    }
}

/// Returns every invariant the spec violates; an empty list means valid.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_spec(spec: &ControlSpec) -> Vec<SpecViolation> {
    let mut out = Vec::new();

    if spec.parameter.trim().is_empty() {
        out.push(SpecViolation::EmptyParameter);
    }

    match &spec.value_domain {
        ValueDomain::Continuous { min, max, step } => {
            if !(min.is_finite() && max.is_finite() && step.is_finite()) {
                out.push(SpecViolation::NonFiniteBound);
            }
            // Written as negations so NaN counts as a violation.
            if !(min < max) {
                out.push(SpecViolation::RangeInverted);
            }
            if !(*step > 0.0) {
                out.push(SpecViolation::NonPositiveStep);
            } else if min < max && !(*step <= max - min) {
                out.push(SpecViolation::StepExceedsRange);
            }
        }
        ValueDomain::Discrete { options } => {
            if options.is_empty() {
                out.push(SpecViolation::EmptyOptions);
            }
            for (i, a) in options.iter().enumerate() {
                if options[..i].contains(a) {
                    let shown = match a {
                        DiscreteOption::Number(n) => n.to_string(),
                        DiscreteOption::Text(t) => t.clone(),
                    };
                    out.push(SpecViolation::DuplicateOption(shown));
                }
            }
        }
        ValueDomain::Color | ValueDomain::Position => {}
    }

    if spec.kind == ControlKind::PresetButtons {
        if spec.presets.len() < 2 {
            out.push(SpecViolation::TooFewPresets(spec.presets.len()));
        }
    } else if !spec.presets.is_empty() {
        out.push(SpecViolation::UnexpectedPresets(spec.presets.len()));
    }

    let compatible = match spec.kind.domain_class() {
        DomainClass::Numeric => spec.value_domain.is_numeric(),
        DomainClass::Discrete => matches!(spec.value_domain, ValueDomain::Discrete { .. }),
        DomainClass::Color => matches!(spec.value_domain, ValueDomain::Color),
        DomainClass::Position => matches!(spec.value_domain, ValueDomain::Position),
        DomainClass::Any => true,
    };
    if !compatible {
        let domain = match spec.value_domain {
            ValueDomain::Continuous { .. } => "continuous",
            ValueDomain::Discrete { .. } => "discrete",
            ValueDomain::Color => "color",
            ValueDomain::Position => "position",
        };
        out.push(SpecViolation::IncompatibleDomain {
            kind: spec.kind,
            domain,
        });
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slider(min: f64, max: f64, step: f64) -> ControlSpec {
        ControlSpec {
            kind: ControlKind::Slider,
            label: "Slider".into(),
            parameter: "lightness".into(),
            value_domain: ValueDomain::Continuous { min, max, step },
            presets: vec![],
        }
    }

    #[test]
    fn default_catalog_order() {
        let c = default_catalog();
        assert_eq!(c.len(), 8);
        assert_eq!(c.kinds()[0], ControlKind::Slider);
        assert_eq!(c.kinds()[1], ControlKind::TextField);
        assert!(c.contains_name("color_picker"));
        assert!(!c.contains_name("knob"));
    }

    #[test]
    fn parse_synonyms() {
        assert_eq!(parse_kind("Drop-down Menu").unwrap(), ControlKind::Dropdown);
        assert_eq!(
            parse_kind("Preset buttons").unwrap(),
            ControlKind::PresetButtons
        );
        assert_eq!(parse_kind("text box").unwrap(), ControlKind::TextField);
        assert_eq!(parse_kind("Clicking").unwrap(), ControlKind::DirectClick);
        assert_eq!(
            parse_kind("click on image").unwrap(),
            ControlKind::DirectClick
        );
        assert_eq!(
            parse_kind("preset buttons with preview overlays").unwrap(),
            ControlKind::PresetButtons
        );
        assert_eq!(parse_kind("COLOR_WHEEL").unwrap(), ControlKind::ColorWheel);
        assert_eq!(
            parse_kind("magic wand"),
            Err(UnknownControl("magic wand".into()))
        );
        assert!(parse_kind("Stepper input").is_err());
        assert!(parse_kind("  ").is_err());
    }

    #[test]
    fn canonical_names_unique() {
        let mut names: Vec<_> = ControlKind::ALL
            .iter()
            .map(|k| fold(k.canonical_name()))
            .collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn synonyms_do_not_collide() {
        let mut all = Vec::new();
        for k in ControlKind::ALL {
            all.push((fold(k.id()), k));
            all.push((fold(k.canonical_name()), k));
            all.extend(k.synonyms().iter().map(|s| (fold(s), k)));
        }
        for (name, kind) in &all {
            assert!(
                all.iter().all(|(n, k)| n != name || k == kind),
                "{name} is ambiguous"
            );
        }
    }

    #[test]
    fn catalog_json_shape() {
        let json: serde_json::Value = serde_json::from_str(&default_catalog().to_json()).unwrap();
        let arr = json.as_array().unwrap();
        assert_eq!(arr.len(), 8);
        assert_eq!(arr[2]["kind"], "dropdown");
        assert_eq!(arr[2]["value_domain_class"], "discrete");
        assert!(arr[2]["synonyms"]
            .as_array()
            .unwrap()
            .iter()
            .any(|s| s == "drop-down menu"));
    }

    #[test]
    fn validate_examples() {
        assert!(validate_spec(&slider(0.0, 1.0, 0.01)).is_empty());
        let v = validate_spec(&slider(1.0, 0.0, 0.01));
        assert_eq!(v, vec![SpecViolation::RangeInverted]);
        assert_eq!(v[0].to_string(), "min < max");

        let mut presets = slider(0.0, 1.0, 0.1);
        presets.kind = ControlKind::PresetButtons;
        presets.presets = vec![Preset {
            value: 0.5.into(),
            caption: "0.5".into(),
            preview: "p".into(),
        }];
        let v = validate_spec(&presets);
        assert_eq!(v, vec![SpecViolation::TooFewPresets(1)]);
        assert!(v[0].to_string().contains(">= 2 presets"));
    }

    #[test]
    fn validate_compatibility_and_options() {
        let wheel = ControlSpec {
            kind: ControlKind::ColorWheel,
            label: "Color Wheel".into(),
            parameter: "hue".into(),
            value_domain: ValueDomain::Position,
            presets: vec![],
        };
        assert!(matches!(
            validate_spec(&wheel)[..],
            [SpecViolation::IncompatibleDomain { .. }]
        ));

        let dropdown = ControlSpec {
            kind: ControlKind::Dropdown,
            label: "Dropdown".into(),
            parameter: "hue".into(),
            value_domain: ValueDomain::Discrete {
                options: vec![DiscreteOption::Number(0.2), DiscreteOption::Number(0.2)],
            },
            presets: vec![],
        };
        assert_eq!(
            validate_spec(&dropdown),
            vec![SpecViolation::DuplicateOption("0.2".into())]
        );

        let text_slider = ControlSpec {
            kind: ControlKind::Slider,
            value_domain: ValueDomain::Discrete {
                options: vec![DiscreteOption::Text("warm".into())],
            },
            ..dropdown.clone()
        };
        assert_eq!(validate_spec(&text_slider).len(), 1);

        assert_eq!(
            validate_spec(&slider(0.0, 1.0, 2.0)),
            vec![SpecViolation::StepExceedsRange]
        );
        assert!(validate_spec(&slider(f64::NAN, 1.0, 0.1)).contains(&SpecViolation::RangeInverted));
    }

    fn any_domain() -> impl Strategy<Value = ValueDomain> {
        prop_oneof![
            (any::<f64>(), any::<f64>(), any::<f64>())
                .prop_map(|(min, max, step)| ValueDomain::Continuous { min, max, step }),
            proptest::collection::vec(
                prop_oneof![
                    any::<f64>().prop_map(DiscreteOption::Number),
                    ".{0,4}".prop_map(DiscreteOption::Text)
                ],
                0..6
            )
            .prop_map(|options| ValueDomain::Discrete { options }),
            Just(ValueDomain::Color),
            Just(ValueDomain::Position),
        ]
    }

    proptest! {
        #[test]
        fn parse_kind_closed(name in ".{0,40}") {
            if let Ok(k) = parse_kind(&name) {
                prop_assert!(default_catalog().contains(k));
            }
        }

        #[test]
        fn validate_is_total(
            kind in proptest::sample::select(ControlKind::ALL.to_vec()),
            domain in any_domain(),
            n_presets in 0usize..4,
            parameter in ".{0,8}",
        ) {
            let spec = ControlSpec {
                kind,
                label: String::new(),
                parameter,
                value_domain: domain,
                presets: (0..n_presets)
                    .map(|i| Preset { value: i.into(), caption: i.to_string(), preview: String::new() })
                    .collect(),
            };
            let _ = validate_spec(&spec);
        }
    }

    #[test]
    fn round_trip_names() {
        for k in ControlKind::ALL {
            assert_eq!(parse_kind(k.canonical_name()).unwrap(), k);
            assert_eq!(parse_kind(k.id()).unwrap(), k);
            assert_eq!(k.id().parse::<ControlKind>().unwrap(), k);
        }
    }
}
