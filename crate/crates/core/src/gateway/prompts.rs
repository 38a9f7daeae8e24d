//! System prompts for the user simulator and the checklist judge, and the
//! judge's JSON reply protocol.

use serde_json::Value;

use super::{ChatClient, ChatMessage};
use crate::dialogue::{Checklist, ChecklistScore, NextInput, TaskSpec};
use crate::error::{Error, Result};

/// The simulator's whole reply must equal this (after trimming) to end the
/// dialogue.
pub const END_MARKER: &str = "<End of Conversation>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Domain {
    /// Open-domain prompts, also used for any unrecognised domain.
    #[default]
    General,
    ECommerce,
    Medical,
}

impl Domain {
    pub fn from_task(task: &TaskSpec) -> Self {
        match task.domain.as_deref().map(str::to_ascii_lowercase).as_deref() {
            Some("ecommerce" | "e-commerce" | "customer_service") => Domain::ECommerce,
            Some("medical" | "medicine") => Domain::Medical,
            _ => Domain::General,
        }
    }

    fn user_template(self) -> &'static str {
        match self {
            Domain::General => GENERAL_USER,
            Domain::ECommerce => ECOMMERCE_USER,
            Domain::Medical => MEDICAL_USER,
        }
    }

    fn judge_template(self) -> &'static str {
        match self {
            Domain::General => GENERAL_JUDGE,
            Domain::ECommerce => ECOMMERCE_JUDGE,
            Domain::Medical => MEDICAL_JUDGE,
        }
    }

    fn roles(self) -> (&'static str, &'static str) {
        match self {
            Domain::General => ("User", "Assistant"),
            Domain::ECommerce => ("User", "Agent"),
            Domain::Medical => ("Patient", "Doctor"),
        }
    }

    pub fn user_prompt(self, profile: &str) -> String {
        self.user_template().replace("{profile}", profile)
    }

    pub fn judge_prompt(self, history: &str, checklist: &Checklist) -> String {
        self.judge_template().replace("{history}", history).replace("{checklist}", &render_checklist(checklist))
    }
}

const GENERAL_USER: &str = "\
You are a human user engaging in a multi-turn conversation with an AI assistant. Please generate user utterances that are natural, coherent, and aligned with the specified conversational goals.

### Conversation Goals

- User intents: {profile}

Please follow the rules below throughout the conversation:

1. In each turn, your utterance should be guided by the currently triggered intent. Do not introduce goals that are unrelated to the specified intents or deviate from the conversation scope.

2. Your response should naturally follow the assistant's previous reply and maintain conversational coherence. You may exhibit realistic user behaviors such as asking follow-up questions, seeking clarification, or restating information when appropriate.

3. Use natural, conversational language rather than structured or list-style expressions, and keep each utterance at a moderate length.

4. If all intents have been fully satisfied, or no further intent can be reasonably triggered, terminate the conversation by outputting: <End of Conversation>.";

const ECOMMERCE_USER: &str = "\
You are an e-commerce platform user. Based on the given user background and goals, please engage in a multi-turn conversation with the customer-service system.

### User Background, Behavioral Patterns and Goals

{profile}

Please strictly follow the dialogue rules below:

1. You may only act as the user. Do not simulate, replace, or guide the customer-service agent's responses.

2. In each turn, generate a natural user utterance based on the customer-service agent's previous reply, using language and tone consistent with real e-commerce interactions.

3. Your utterances should remain focused on the specified user goals. Do not introduce unrelated topics or requests.

4. Once you believe that sufficient information has been obtained to fully satisfy the user goals, you may directly terminate the conversation without waiting for additional confirmation or actions.

5. If the customer-service agent explicitly indicates that the request cannot be further processed, or you determine that all goals have been completed, output: <End of Conversation>.";

const MEDICAL_USER: &str = "\
You are a patient participating in an online medical consultation. Based on the given patient background and consultation goals, please engage in a multi-turn conversation with the medical system.

### Patient Information, Symptoms and Consultation Goals

{profile}

Please strictly follow the dialogue rules below:

1. You may only act as the patient. Do not simulate or replace the doctor's role.

2. In each turn, generate a natural, realistic, and logically coherent patient utterance based on the doctor's previous response.

3. You should exhibit a help-seeking and awaiting-professional-judgment patient stance. Do not proactively correct, confirm, or explain the doctor's medical conclusions.

4. Your utterances should remain focused on the consultation goals. Do not introduce topics unrelated to the goals or deviate from the current consultation theme.

5. You may terminate the conversation only when you are confident that the consultation goals have been sufficiently satisfied, or when the doctor explicitly indicates that no further assistance can be provided. Before deciding to end the conversation, please ensure that: The consultation goals have been clearly and accurately addressed by the doctor; The doctor's advice is explicit and actionable; No remaining questions or ambiguities require further clarification.

6. When you determine that the conversation has met the termination conditions, output: <End of Conversation>.";

const GENERAL_JUDGE: &str = "\
You are a professional dialogue evaluator. Your task is to assess the assistant's performance in the conversation based on a given checklist and determine whether the dialogue has terminated.

### Dialogue History

{history}

### Checklist

{checklist}

### Scoring Guidelines

For each checklist item, evaluate whether the assistant has completed the corresponding task behavior in the dialogue and assign a score according to the following criteria:

- 1: The assistant clearly and fully satisfies the item, providing complete and explicit information aligned with the user's intent;

- 0.5: The assistant partially satisfies the item, but the response is vague, incomplete, or only indirectly addresses the requirement;

- 0: The assistant does not address the item at all or clearly fails to fulfill the requirement.

All judgments must be strictly based on the observed dialogue content and the behaviors specified in the checklist. Do not speculate, infer, or rationalize any assistant behavior that is not explicitly present in the dialogue.

### Dialogue Termination Determination

The dialogue is considered terminated, and the field `done` should be set to 1, if and only if the user's final complete utterance exactly matches the string \"<End of Conversation>\". Otherwise, set `done` to 0.

### Output Format

Return only the following JSON object, without any additional text or explanation:

{
  \"checklist\": [score_1, score_2, ..., score_n],
  \"done\": 0 or 1
}";

const ECOMMERCE_JUDGE: &str = "\
You are a professional customer-service dialogue evaluator. Your task is to assess the customer-service agent's behavior throughout the conversation based on the given checklist and to determine whether the dialogue has ended.

### Dialogue History

{history}

### Checklist

{checklist}

### Scoring Guidelines

For each item in the checklist, evaluate the customer-service agent's behavior in the dialogue and assign a score according to the following guidelines:

- 1: The agent clearly and fully completed the corresponding service behavior;

- 0.5: The agent partially completed the service behavior, but the response is unclear, insufficient, or only indirectly addresses the requirement;

- 0: The agent did not address the service behavior at all or clearly failed to fulfill the requirement.

When assigning scores, strictly base your judgment on the content explicitly present in the dialogue. Do not rely on common sense, assumptions, or speculative reasoning to fill in missing information.

### Dialogue Termination Determination

The dialogue is considered terminated if and only if the user's final complete utterance exactly matches the string \"<End of Conversation>\". In this case, set `done` to 1; otherwise, set `done` to 0.

### Output Format

Return the evaluation result strictly in the following JSON format, without any additional text or explanation:

{
  \"checklist\": [score_1, score_2, ...],
  \"done\": 0 or 1
}";

const MEDICAL_JUDGE: &str = "\
You are a professional medical dialogue evaluator. Your task is to assess the doctor's performance throughout the medical consultation based on the given dialogue history and checklist, and to determine whether the consultation has ended.

### Dialogue History

{history}

### Checklist

{checklist}

### Scoring Guidelines

Based on the dialogue history, evaluate whether the doctor has completed each item in the checklist and assign a score according to the following criteria:

- 1: The doctor has clearly and fully completed the item, with information that is explicit, complete, and medically sound;

- 0.5: The doctor has partially addressed the item, but the response is unclear, insufficient, or only indirectly related;

- 0: The doctor did not address the item at all or clearly failed to fulfill the corresponding consultation responsibility.

When assigning scores, strictly base your judgment on the content explicitly present in the dialogue and the behaviors required by the checklist. Do not make subjective assumptions or rationalize missing information that is not explicitly provided by the doctor.

### Dialogue Termination Determination

The consultation is considered terminated if and only if the patient's final complete utterance exactly matches the string \"<End of Conversation>\". In this case, set `done` to 1; otherwise, set `done` to 0.

### Output Format

Return the evaluation result strictly in the following JSON format, without any additional text or explanation:

{
  \"checklist\": [score_1, score_2, ...],
  \"done\": 0 or 1
}";

const JUDGE_REMINDER: &str =
    "Your previous reply could not be parsed. Return only the JSON object {\"checklist\": [...], \"done\": 0 or 1}.";

/// `1. item` lines.
pub fn render_checklist(checklist: &Checklist) -> String {
    checklist.items().iter().enumerate().map(|(i, c)| format!("{}. {c}", i + 1)).collect::<Vec<_>>().join("\n")
}

/// `Role: text` lines for (user, response) pairs; a missing response ends the
/// history on a user line.
pub fn render_history(domain: Domain, exchanges: &[(&str, Option<&str>)]) -> String {
    let (user, assistant) = domain.roles();
    let mut out = Vec::new();
    for (u, a) in exchanges {
        out.push(format!("{user}: {u}"));
        if let Some(a) = a {
            out.push(format!("{assistant}: {a}"));
        }
    }
    out.join("\n")
}

/// Asks the simulator for the next user turn. `exchanges` holds every user
/// input with the response it received, the last one included.
pub fn simulate_user(client: &ChatClient, task: &TaskSpec, exchanges: &[(&str, &str)]) -> Result<NextInput> {
    let domain = Domain::from_task(task);
    // The simulator plays the user, so roles are mirrored: its own past
    // utterances are `assistant` turns.
    let mut messages = vec![ChatMessage::new("system", domain.user_prompt(&task.user_profile))];
    messages.push(ChatMessage::new("user", "Start the conversation."));
    for (u, a) in exchanges {
        messages.push(ChatMessage::new("assistant", *u));
        messages.push(ChatMessage::new("user", *a));
    }
    let reply = client.chat_complete(&messages)?;
    if reply.text.trim() == END_MARKER {
        Ok(NextInput::Terminal)
    } else {
        Ok(NextInput::Input { text: reply.text, tokens: reply.completion_tokens })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JudgeVerdict {
    pub score: ChecklistScore,
    pub done: bool,
    /// Re-prompts needed to obtain parseable JSON (0 or 1).
    pub retries: u32,
}

/// First balanced `{...}` substring, honouring JSON strings.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

enum Parsed {
    Verdict(ChecklistScore, bool),
    Unparseable(String),
}

fn parse_value(value: &Value, n: usize) -> Result<(ChecklistScore, bool)> {
    let object = value.as_object().ok_or_else(|| Error::Judge("reply is not a JSON object".into()))?;
    let items = object
        .get("checklist")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Judge("reply lacks a `checklist` array".into()))?;
    let values: Vec<f64> = items
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| Error::Judge(format!("checklist entry {v} is not a number"))))
        .collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::ScoreArity { expected: n, got: values.len() });
    }
    let score = ChecklistScore::new(&values)?;
    let done = match object.get("done") {
        Some(v) if v.as_f64() == Some(0.0) || v == &Value::Bool(false) => false,
        Some(v) if v.as_f64() == Some(1.0) || v == &Value::Bool(true) => true,
        Some(v) => return Err(Error::Judge(format!("`done` must be 0 or 1, got {v}"))),
        None => return Err(Error::Judge("reply lacks `done`".into())),
    };
    Ok((score, done))
}

fn parse_attempt(text: &str, n: usize) -> Result<Parsed> {
    let value = match serde_json::from_str::<Value>(text.trim()) {
        Ok(v) => v,
        Err(_) => match first_object(text).map(serde_json::from_str::<Value>) {
            Some(Ok(v)) => v,
            _ => return Ok(Parsed::Unparseable(text.chars().take(200).collect())),
        },
    };
    let (score, done) = parse_value(&value, n)?;
    Ok(Parsed::Verdict(score, done))
}

/// Parses one judge reply: strict JSON first, then the first balanced object
/// in the text. Arity and range violations are errors; `Ok(None)` means no
/// JSON object could be found.
pub fn parse_judge_reply(text: &str, n: usize) -> Result<Option<(ChecklistScore, bool)>> {
    Ok(match parse_attempt(text, n)? {
        Parsed::Verdict(s, d) => Some((s, d)),
        Parsed::Unparseable(_) => None,
    })
}

/// Scores the dialogue against `checklist`, re-prompting once when the reply
/// holds no parseable JSON object.
pub fn judge_checklist(
    client: &ChatClient,
    domain: Domain,
    checklist: &Checklist,
    history: &str,
) -> Result<JudgeVerdict> {
    let mut messages = vec![
        ChatMessage::new("system", domain.judge_prompt(history, checklist)),
        ChatMessage::new("user", "Evaluate the dialogue above."),
    ];
    let mut last = String::new();
    for retries in 0..2 {
        let reply = client.chat_complete(&messages)?;
        match parse_attempt(&reply.text, checklist.len())? {
            Parsed::Verdict(score, done) => return Ok(JudgeVerdict { score, done, retries }),
            Parsed::Unparseable(snippet) => last = snippet,
        }
        messages.push(ChatMessage::new("assistant", reply.text));
        messages.push(ChatMessage::new("user", JUDGE_REMINDER));
    }
    Err(Error::Judge(format!("no parseable JSON after one retry; last reply began `{last}`")))
}
