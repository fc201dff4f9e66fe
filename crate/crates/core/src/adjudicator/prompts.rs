use crate::model::ComplicationKind;

const IRIS_PROLAPSE: &str = include_str!("../../prompts/iris_prolapse.txt");
const PCR: &str = include_str!("../../prompts/pcr.txt");
const VITREOUS_LOSS: &str = include_str!("../../prompts/vitreous_loss.txt");

/// Catalog prompt for a complication, verbatim.
pub fn build_prompt(kind: ComplicationKind) -> &'static str {
    match kind {
        ComplicationKind::IrisProlapse => IRIS_PROLAPSE,
        ComplicationKind::Pcr => PCR,
        ComplicationKind::VitreousLoss => VITREOUS_LOSS,
    }
}
