//! Prompt templates.

use crate::dataset::Aspect;

/// System prompt for reasoning with a preference dataset in the user prompt.
pub const REASONING_SYSTEM: &str = include_str!("prompts/reasoning_system.txt");

/// System prompt for the no-dataset condition: the same steps with every
/// dataset instruction removed.
pub const REASONING_SYSTEM_NO_DATASET: &str = include_str!("prompts/reasoning_system_nodata.txt");

/// Code generation instructions up to the opening of the `control_code`
/// exemplar, which is completed with [`REFERENCE_PROGRAM`].
pub const CODEGEN_SYSTEM_HEADER: &str = include_str!("prompts/codegen_system.txt");

/// Hue-adjustment program implementing every control, used as the code
/// exemplar.
pub const REFERENCE_PROGRAM: &str = include_str!("prompts/reference_program.py");

pub const TASK_HEADING: &str = "## User task";
pub const ASPECTS_HEADING: &str = "## User preference aspects";
pub const CANDIDATES_HEADING: &str = "## UI control candidates";
pub const DATASET_HEADING: &str = "## Crowdsourced UI control preference dataset";
pub const RECOMMENDED_HEADING: &str = "## UI controls to implement";
pub const EXAMPLES_HEADING: &str = "## Example code";

/// The aspect definitions exactly as they appear in the reasoning prompt.
pub fn aspect_definition(aspect: Aspect) -> &'static str {
    match aspect {
        Aspect::Predictability => {
            "Predictability: allows users to obtain results with no surprises."
        }
        Aspect::Efficiency => {
            "Efficiency: allows users to perform tasks with a minimum amount of time and effort."
        }
        Aspect::Explorability => {
            "Explorability: allows users to explore multiple possibilities to perform the task."
        }
    }
}

pub fn codegen_system() -> String {
    let mut s = String::with_capacity(CODEGEN_SYSTEM_HEADER.len() + REFERENCE_PROGRAM.len() + 16);
    s.push_str(CODEGEN_SYSTEM_HEADER);
    s.push_str(REFERENCE_PROGRAM);
    s.push_str("}\n}\n");
    s
}
