//! Prompt rendering for the situational-context query and for the variant in
//! which the LLM also receives a prose description of the face.

use crate::annotations::GameOutcome;
use crate::distributions::{EmotionDistribution, EmotionLabel};
use crate::fusion::{describe_distribution_nl, BandTable, FusionError};

/// Rules of the Split-or-Steal round, shown before every query.
pub const GAME_DESCRIPTION: &str = "Imagine a scenario where two people, Player A and Player B, \
play a competitive game called \"Split or Steal.\" Players play multiple rounds with each other. \
In each round of the game, players each decide whether to split or steal from a pot of $10. \
If both choose \"split\", they each get $5. If both choose \"steal\", they each get $1. \
If one chooses \"split\" but the other chooses \"steal\", the stealer gets all $10. \
They make their choices secretly and their choices are revealed at the end of the round. \
Scenarios describe one round of the game. Imagine the feelings of Player A.";

/// Line the model is asked to answer in.
pub const ANSWER_FORMAT: &str = "\"Joy: {prob 1}, Neutral: {prob 2}, Surprise: {prob 3}, \
Anger: {prob 4}, Disgust: {prob 5}, Fear: {prob 6}, Sad: {prob 7}.\"";

/// The three (or four) blocks of a prompt, rendered in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub game_description: String,
    pub outcome_clause: String,
    /// Present only when the LLM integrates face and context itself.
    pub face_description: Option<String>,
    pub request_clause: String,
}

impl PromptSpec {
    pub fn for_outcome(outcome: GameOutcome) -> Self {
        Self {
            game_description: GAME_DESCRIPTION.to_string(),
            outcome_clause: outcome_clause(outcome),
            face_description: None,
            request_clause: request_clause(),
        }
    }

    pub fn render(&self) -> String {
        let mut parts = vec![self.game_description.as_str(), self.outcome_clause.as_str()];
        if let Some(face) = &self.face_description {
            parts.push(face);
        }
        parts.push(&self.request_clause);
        parts.join("\n")
    }
}

pub fn outcome_clause(outcome: GameOutcome) -> String {
    format!(
        "In this round, Player A chooses \"{}\" and Player B chooses \"{}.\"",
        outcome.player_a_choice(),
        outcome.player_b_choice()
    )
}

pub fn request_clause() -> String {
    let names: Vec<&str> = EmotionLabel::ALL.iter().map(|l| l.display_name()).collect();
    format!(
        "How does Player A experience emotions? Provide a probability distribution based on the \
following emotion list: {}. Ensure that the sum of probabilities is 1.\n\
Provide answer in the following format:\n{ANSWER_FORMAT}",
        names.join(", ")
    )
}

/// Context-only prompt for one outcome.
pub fn build_prompt(outcome: GameOutcome) -> String {
    PromptSpec::for_outcome(outcome).render()
}

/// Context prompt plus a prose rendering of the face distribution, inserted
/// just before the request.
pub fn build_integration_prompt(
    outcome: GameOutcome,
    face: &EmotionDistribution,
    bands: &BandTable,
) -> Result<String, FusionError> {
    let mut spec = PromptSpec::for_outcome(outcome);
    spec.face_description = Some(describe_distribution_nl(face, bands)?);
    Ok(spec.render())
}
