//! Turning a recommendation into a UI.
//!
//! Two paths: the model writes widget code guided by per-control examples,
//! or [`emit_abstract_spec`] maps each recommended control to a validated
//! [`ControlSpec`] without any model call. Generated code is kept as text and
//! never executed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{
    parse_kind, validate_spec, ControlKind, ControlSpec, DiscreteOption, Preset, ValueDomain,
};
use crate::dataset::TaskEntry;
use crate::llm::{extract_json, Gateway, LlmError};
use crate::prompts;
use crate::reasoning::WeightedRecommendation;

pub const ENVELOPE_KEYS: [&str; 3] = ["task", "control_type", "control_code"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LintFinding {
    NotAnObject,
    Missing(&'static str),
    EmptyCode,
    EmptyControlType,
    UnknownControl(String),
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LintFinding::NotAnObject => f.write_str("envelope is not a JSON object"),
            LintFinding::Missing(key) => write!(f, "{key} missing"),
            LintFinding::EmptyCode => f.write_str("empty code"),
            LintFinding::EmptyControlType => f.write_str("control_type lists no controls"),
            LintFinding::UnknownControl(name) => write!(f, "unknown control type {name:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("recommendation lists no controls")]
    EmptyRecommendation,
    #[error("no example code for {0}")]
    MissingExample(ControlKind),
    #[error("model answer is not an envelope: {0}")]
    Schema(String),
    #[error("generated envelope failed lint: {}", join(.0))]
    Lint(Vec<LintFinding>),
    #[error(transparent)]
    Gateway(#[from] LlmError),
}

fn join(findings: &[LintFinding]) -> String {
    findings
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

const SLIDER: &str = "\
slider_label = controls.Label(value='Slider:')
slider = controls.FloatSlider(value=0.0, min=0.0, max=1.0, step=0.01)
slider.observe(callback, names='value')
";

const TEXT_FIELD: &str = "\
text_field_label = controls.Label(value='Text Field:')
text_field = controls.BoundedFloatText(value=0.0, min=0.0, max=1.0, step=0.01)
text_field.observe(callback, names='value')
";

const DROPDOWN: &str = "\
dropdown_label = controls.Label(value='Dropdown:')
dropdown = controls.Dropdown(options=[0.0, 0.2, 0.4, 0.6, 0.8], value=0.0)
dropdown.observe(callback, names='value')
";

const RADIO_BUTTONS: &str = "\
radio_buttons_label = controls.Label(value='Radio Buttons:')
radio_buttons = controls.RadioButtons(options=[0.0, 0.2, 0.4, 0.6, 0.8], value=0.0)
radio_buttons.observe(callback, names='value')
";

const PRESET_BUTTONS: &str = "\
preset_label = controls.Label(value='Preset buttons:')
presets = [(0.0, 'red'), (0.2, 'green'), (0.4, 'cyan'), (0.6, 'blue'), (0.8, 'magenta')]
value_mapping = {f\"{value}\": value for value, color in presets}
preset_buttons = [
    controls.Button(description=f\"{value}\",
                    layout=controls.Layout(width='75px', height='30px'),
                    style={'button_color': color})
    for value, color in presets
]
for btn in preset_buttons:
    btn.on_click(lambda btn: update_plot({'owner': btn}))
preset_buttons_box = controls.HBox(preset_buttons)
";

const COLOR_WHEEL: &str = "\
color_wheel_label = controls.Label(value='Color Wheel:')
color_wheel = controls.Output()
with color_wheel:
    fig, ax = plt.subplots(figsize=(1.5, 1.5))
    theta = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    colors = plt.cm.hsv(theta / (2 * np.pi))
    for i in range(360):
        ax.add_patch(Wedge(center=(0, 0), r=1, theta1=i, theta2=i + 1, color=colors[i]))
    ax.set_aspect('equal')
    ax.axis('off')

    def on_color_wheel_click(event):
        if event.inaxes:
            hue = round(np.arctan2(event.ydata, event.xdata) / (2 * np.pi), 2)
            update_plot(None, hue=hue)

    fig.canvas.mpl_connect('button_press_event', on_color_wheel_click)
    plt.show()
";

const COLOR_PICKER: &str = "\
color_picker_label = controls.Label(value='Color Picker:')
color_picker = controls.ColorPicker(concise=True, value='#ffffff', disabled=False)

def hex_to_hue(hex_color):
    rgb = np.array([int(hex_color[i:i+2], 16) for i in (1, 3, 5)]) / 255.0
    return mcolors.rgb_to_hsv(rgb.reshape(1, 1, 3))[0, 0, 0]

color_picker.observe(lambda change: update_plot(None, hue=hex_to_hue(change['new'])), names='value')
";

const DIRECT_CLICK: &str = "\
direct_click_label = controls.Label(value='Click on the image to place:')
canvas = controls.Output()
with canvas:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image)
    ax.axis('off')

    def on_image_click(event):
        if event.inaxes:
            width, height = image.size
            update_plot(None, position=(event.xdata / width, event.ydata / height))

    fig.canvas.mpl_connect('button_press_event', on_image_click)
    plt.show()
";

/// Example code handed to the model, one snippet per control kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeGuidance {
    pub language_label: String,
    pub example_corpus: BTreeMap<ControlKind, String>,
}

impl Default for CodeGuidance {
    /// Snippets adapted from the hue-adjustment reference program.
    fn default() -> Self {
        let example_corpus = [
            (ControlKind::Slider, SLIDER),
            (ControlKind::TextField, TEXT_FIELD),
            (ControlKind::Dropdown, DROPDOWN),
            (ControlKind::RadioButtons, RADIO_BUTTONS),
            (ControlKind::PresetButtons, PRESET_BUTTONS),
            (ControlKind::ColorWheel, COLOR_WHEEL),
            (ControlKind::ColorPicker, COLOR_PICKER),
            (ControlKind::DirectClick, DIRECT_CLICK),
        ]
        .into_iter()
        .map(|(k, s)| (k, s.to_string()))
        .collect();
        Self {
            language_label: "python".into(),
            example_corpus,
        }
    }
}

impl CodeGuidance {
    pub fn missing(&self) -> Vec<ControlKind> {
        ControlKind::ALL
            .iter()
            .copied()
            .filter(|k| !self.example_corpus.contains_key(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedUI {
    pub task: String,
    pub kinds: Vec<ControlKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub specs: Vec<ControlSpec>,
}

impl GeneratedUI {
    /// The code path's output in envelope form.
    pub fn envelope(&self) -> Value {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.canonical_name()).collect();
        json!({
            "task": self.task,
            "control_type": names.join(", "),
            "control_code": self.code_text.clone().unwrap_or_default(),
        })
    }
}

/// System prompt (with the envelope exemplar) and a user prompt naming the
/// task, the controls to implement and each control's example code.
pub fn build_codegen_prompt(
    rec: &WeightedRecommendation,
    guidance: &CodeGuidance,
) -> Result<(String, String), CodegenError> {
    let kinds = rec.kinds();
    if kinds.is_empty() {
        return Err(CodegenError::EmptyRecommendation);
    }
    let mut user = String::new();
    let _ = writeln!(user, "{}\n{}\n", prompts::TASK_HEADING, rec.task.trim());
    let names: Vec<&str> = kinds.iter().map(|k| k.canonical_name()).collect();
    let _ = writeln!(
        user,
        "{}\n{}\n",
        prompts::RECOMMENDED_HEADING,
        names.join(", ")
    );
    let _ = writeln!(user, "{}", prompts::EXAMPLES_HEADING);
    for kind in kinds {
        let example = guidance
            .example_corpus
            .get(&kind)
            .ok_or(CodegenError::MissingExample(kind))?;
        let _ = write!(
            user,
            "\n### {}\n```{}\n{}```\n",
            kind.canonical_name(),
            guidance.language_label,
            example
        );
    }
    Ok((prompts::codegen_system(), user))
}

fn code_is_empty(v: &Value) -> bool {
    match v {
        Value::String(s) => s.trim().is_empty(),
        Value::Object(m) => m.values().all(code_is_empty),
        Value::Array(a) => a.iter().all(code_is_empty),
        Value::Null => true,
        _ => false,
    }
}

/// Mechanical check of the envelope contract.
pub fn lint_generated(envelope: &Value) -> Vec<LintFinding> {
    let Value::Object(map) = envelope else {
        return vec![LintFinding::NotAnObject];
    };
    let mut out = Vec::new();
    for key in ENVELOPE_KEYS {
        if !map.contains_key(key) {
            out.push(LintFinding::Missing(key));
        }
    }
    if let Some(types) = map.get("control_type") {
        let tokens = control_type_tokens(types);
        if tokens.is_empty() {
            out.push(LintFinding::EmptyControlType);
        }
        for t in tokens {
            if parse_kind(&t).is_err() {
                out.push(LintFinding::UnknownControl(t));
            }
        }
    }
    if let Some(code) = map.get("control_code") {
        if code_is_empty(code) {
            out.push(LintFinding::EmptyCode);
        }
    }
    out
}

fn control_type_tokens(v: &Value) -> Vec<String> {
    let raw: Vec<String> = match v {
        Value::String(s) => s.split(',').map(str::to_string).collect(),
        Value::Array(a) => a
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| x.to_string())
            })
            .collect(),
        other => vec![other.to_string()],
    };
    raw.into_iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn code_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(m) => m
            .iter()
            .map(|(k, v)| format!("# {k}\n{}", code_text(v)))
            .collect::<Vec<_>>()
            .join("\n"),
        other => other.to_string(),
    }
}

/// Parses and lints one model answer.
pub fn parse_envelope(text: &str) -> Result<GeneratedUI, CodegenError> {
    let envelope = extract_json(text).map_err(|e| CodegenError::Schema(e.to_string()))?;
    let findings = lint_generated(&envelope);
    if !findings.is_empty() {
        return Err(CodegenError::Lint(findings));
    }
    let mut kinds = Vec::new();
    for t in control_type_tokens(&envelope["control_type"]) {
        let k = parse_kind(&t).expect("lint checked every token");
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    Ok(GeneratedUI {
        task: envelope["task"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| envelope["task"].to_string()),
        kinds,
        code_text: Some(code_text(&envelope["control_code"])),
        specs: Vec::new(),
    })
}

pub async fn generate_code(
    rec: &WeightedRecommendation,
    guidance: &CodeGuidance,
    gateway: &Gateway,
) -> Result<GeneratedUI, CodegenError> {
    let (system, user) = build_codegen_prompt(rec, guidance)?;
    let response = gateway.complete(&gateway.request(system, user)).await?;
    parse_envelope(&response.text)
}

const PRESET_VALUES: [(f64, &str); 5] = [
    (0.0, "red"),
    (0.2, "green"),
    (0.4, "cyan"),
    (0.6, "blue"),
    (0.8, "magenta"),
];

/// Parameter name for a task: the dataset name's last segment
/// (`image_adjust_lightness` gives `lightness`), else the last word of the
/// description.
pub fn parameter_name(task: &str, entry: Option<&TaskEntry>) -> String {
    if let Some(e) = entry {
        if let Some(last) = e.name.rsplit('_').next().filter(|s| !s.is_empty()) {
            return last.to_string();
        }
    }
    task.split(|c: char| !c.is_alphanumeric())
        .rfind(|w| !w.is_empty())
        .map(str::to_lowercase)
        .unwrap_or_else(|| "value".into())
}

/// One default spec for `kind` over normalized units.
pub fn default_spec(kind: ControlKind, parameter: &str) -> ControlSpec {
    let unit = || ValueDomain::Continuous {
        min: 0.0,
        max: 1.0,
        step: 0.01,
    };
    let options = || ValueDomain::Discrete {
        options: PRESET_VALUES
            .iter()
            .map(|&(v, _)| DiscreteOption::Number(v))
            .collect(),
    };
    let (value_domain, presets) = match kind {
        ControlKind::Slider | ControlKind::TextField => (unit(), Vec::new()),
        ControlKind::Dropdown | ControlKind::RadioButtons => (options(), Vec::new()),
        ControlKind::ColorWheel | ControlKind::ColorPicker => (ValueDomain::Color, Vec::new()),
        ControlKind::DirectClick => (ValueDomain::Position, Vec::new()),
        ControlKind::PresetButtons => (
            unit(),
            PRESET_VALUES
                .iter()
                .map(|&(v, color)| Preset {
                    value: json!(v),
                    caption: format!("{v:?}"),
                    preview: color.to_string(),
                })
                .collect(),
        ),
    };
    ControlSpec {
        kind,
        label: kind.canonical_name().to_string(),
        parameter: parameter.to_string(),
        value_domain,
        presets,
    }
}

/// Deterministic specs for every recommended kind, in catalog order.
pub fn emit_abstract_spec(
    rec: &WeightedRecommendation,
    task_entry: Option<&TaskEntry>,
) -> Result<Vec<ControlSpec>, CodegenError> {
    let kinds = rec.kinds();
    if kinds.is_empty() {
        return Err(CodegenError::EmptyRecommendation);
    }
    let parameter = parameter_name(&rec.task, task_entry);
    let specs: Vec<ControlSpec> = kinds
        .into_iter()
        .map(|k| default_spec(k, &parameter))
        .collect();
    debug_assert!(specs.iter().all(|s| validate_spec(s).is_empty()));
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Aspect;
    use crate::llm::ScriptedProvider;
    use crate::reasoning::RecommendedControl;
    use crate::replies::codegen_reply;
    use std::sync::Arc;

    fn rec(task: &str, kinds: &[ControlKind]) -> WeightedRecommendation {
        WeightedRecommendation {
            task: task.into(),
            n_runs: 1,
            per_aspect: [(
                Aspect::Efficiency,
                kinds
                    .iter()
                    .map(|&kind| RecommendedControl {
                        kind,
                        weight: 1,
                        score: 10 / kinds.len().max(1) as u32,
                        rationale: String::new(),
                    })
                    .collect(),
            )]
            .into(),
        }
    }

    #[test]
    fn corpus_covers_catalog() {
        assert!(CodeGuidance::default().missing().is_empty());
    }

    #[test]
    fn prompt_contents() {
        let g = CodeGuidance::default();
        let (sys, user) =
            build_codegen_prompt(&rec("Adjust image lightness", &[ControlKind::Slider]), &g)
                .unwrap();
        for key in ENVELOPE_KEYS {
            assert!(sys.contains(&format!("\"{key}\"")), "{key}");
        }
        assert!(user.contains("controls.FloatSlider"));
        assert!(!user.contains("controls.Dropdown("));
        assert!(user.contains("Adjust image lightness"));
        let again =
            build_codegen_prompt(&rec("Adjust image lightness", &[ControlKind::Slider]), &g)
                .unwrap();
        assert_eq!((sys.clone(), user.clone()), again);
        let other =
            build_codegen_prompt(&rec("Adjust image lightness", &[ControlKind::Dropdown]), &g)
                .unwrap();
        assert_ne!(user, other.1);
    }

    #[test]
    fn missing_example() {
        let mut g = CodeGuidance::default();
        g.example_corpus.remove(&ControlKind::ColorWheel);
        assert_eq!(
            build_codegen_prompt(&rec("t", &[ControlKind::ColorWheel]), &g),
            Err(CodegenError::MissingExample(ControlKind::ColorWheel))
        );
        assert_eq!(
            build_codegen_prompt(&rec("t", &[]), &g),
            Err(CodegenError::EmptyRecommendation)
        );
    }

    #[test]
    fn lint_cases() {
        let ok = json!({"task": "Adjust image hue", "control_type": "Slider, Dropdown, Radio Buttons, Text Field, Preset Buttons, Color Wheel, Color Picker", "control_code": "x = 1"});
        assert!(lint_generated(&ok).is_empty());
        let empty = json!({"task": "t", "control_type": "Slider", "control_code": "  "});
        assert_eq!(lint_generated(&empty), vec![LintFinding::EmptyCode]);
        assert_eq!(lint_generated(&empty)[0].to_string(), "empty code");
        let missing = json!({"task": "t", "control_type": "Slider"});
        assert_eq!(
            lint_generated(&missing)[0].to_string(),
            "control_code missing"
        );
        let off = json!({"task": "t", "control_type": "Slider, Magic Wand", "control_code": "x"});
        let f = lint_generated(&off);
        assert_eq!(f, vec![LintFinding::UnknownControl("Magic Wand".into())]);
        assert!(f[0].to_string().contains("Magic Wand"));
        assert_eq!(lint_generated(&json!([1])), vec![LintFinding::NotAnObject]);
        let nested =
            json!({"task": "t", "control_type": ["Slider"], "control_code": {"slider": "s = 1"}});
        assert!(lint_generated(&nested).is_empty());
    }

    #[tokio::test]
    async fn generate_via_mock() {
        let reply = codegen_reply(
            "Adjust image hue",
            &[ControlKind::Slider, ControlKind::Dropdown],
            "slider = 1",
        );
        let p = Arc::new(ScriptedProvider::from_texts([format!(
            "Here you go:\n{reply}\n"
        )]));
        let ui = generate_code(
            &rec("Adjust image hue", &[ControlKind::Slider]),
            &CodeGuidance::default(),
            &Gateway::scripted(p.clone()),
        )
        .await
        .unwrap();
        assert_eq!(ui.kinds, vec![ControlKind::Slider, ControlKind::Dropdown]);
        assert_eq!(ui.code_text.as_deref(), Some("slider = 1"));
        assert!(p.requests()[0].user_prompt.contains("FloatSlider"));
    }

    #[tokio::test]
    async fn generate_rejects_bad_envelopes() {
        let g =
            |t: &str| Gateway::scripted(Arc::new(ScriptedProvider::from_texts([t.to_string()])));
        let r = rec("t", &[ControlKind::Slider]);
        let cg = CodeGuidance::default();
        let e = generate_code(&r, &cg, &g(r#"{"task":"t","control_type":"Slider"}"#)).await;
        assert!(
            matches!(e, Err(CodegenError::Lint(f)) if f == vec![LintFinding::Missing("control_code")])
        );
        let e = generate_code(
            &r,
            &cg,
            &g(r#"{"task":"t","control_type":"Slider, Magic Wand","control_code":"x"}"#),
        )
        .await;
        assert!(matches!(&e, Err(CodegenError::Lint(_))));
        assert!(e.unwrap_err().to_string().contains("Magic Wand"));
        assert!(matches!(
            generate_code(&r, &cg, &g("no json")).await,
            Err(CodegenError::Schema(_))
        ));
    }

    #[test]
    fn spec_defaults() {
        let entry = TaskEntry {
            name: "image_adjust_lightness".into(),
            description: "Adjust image lightness".into(),
            requirement_tags: Default::default(),
            goal_style: crate::dataset::GoalStyle::Exploration,
        };
        let specs = emit_abstract_spec(
            &rec("Adjust image lightness", &[ControlKind::Slider]),
            Some(&entry),
        )
        .unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(
            specs[0].value_domain,
            ValueDomain::Continuous {
                min: 0.0,
                max: 1.0,
                step: 0.01
            }
        );
        assert_eq!(specs[0].parameter, "lightness");

        let all = emit_abstract_spec(&rec("Place the logo", &ControlKind::ALL), None).unwrap();
        assert_eq!(all.len(), 8);
        for s in &all {
            assert!(validate_spec(s).is_empty(), "{s:?}");
        }
        let presets = all
            .iter()
            .find(|s| s.kind == ControlKind::PresetButtons)
            .unwrap();
        assert_eq!(presets.presets.len(), 5);
        for p in &presets.presets {
            assert_eq!(p.caption, p.value.to_string());
        }
        let click = all
            .iter()
            .find(|s| s.kind == ControlKind::DirectClick)
            .unwrap();
        assert_eq!(click.value_domain, ValueDomain::Position);
        assert_eq!(click.parameter, "logo");
        assert!(emit_abstract_spec(&rec("t", &[]), None).is_err());
    }
}
