use serde::{Deserialize, Serialize};

/// Opening sentence for the corridor task.
pub const SOCIALNAV_TASK: &str =
    "You are a robot navigating a corridor with humans walking around trying to reach the goal/star.";

/// Opening sentence for the point-mass task.
pub const POINTREACH_TASK: &str = "You are a point robot in a square arena trying to reach the goal.";

const BODY: &str = " The user had to pick between two alternatives and picked their preferred alternative and they are now giving an explanation for their pick. Which feature(s) was most important of [{FEATURES}]? The text given by the user is: '{USER_TEXT}' Please respond in the following format for each feature that is relevant to the text given by the user: [feature:insert feature, sentiment:insert positive or negative, value: insert high or low]. Sentiment explains if the user thought the robot was behaving well in regards to the feature, if the robot behaved well it should be positive, else negative. Value indicates if the value of the feature was high or low. Only mention the features that are relevant, disregard the others.";

/// Marker preceding the user text in a built prompt.
pub(crate) const USER_TEXT_OPEN: &str = "The text given by the user is: '";
/// Marker following the user text in a built prompt.
pub(crate) const USER_TEXT_CLOSE: &str = "' Please respond in the following format";
pub(crate) const FEATURES_OPEN: &str = "was most important of [";
pub(crate) const FEATURES_CLOSE: &str = "]? ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// First sentence describing the task; the rest of the prompt is fixed.
    pub task_sentence: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { task_sentence: SOCIALNAV_TASK.to_string() }
    }
}

impl PromptTemplate {
    pub fn pointreach() -> Self {
        Self { task_sentence: POINTREACH_TASK.to_string() }
    }

    pub fn build<S: AsRef<str>>(&self, user_text: &str, features: &[S]) -> String {
        let list = features.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ");
        let mut out = String::with_capacity(self.task_sentence.len() + BODY.len() + list.len() + user_text.len());
        out.push_str(&self.task_sentence);
        out.push_str(&BODY.replacen("{FEATURES}", &list, 1).replacen("{USER_TEXT}", user_text, 1));
        out
    }
}

/// Prompt for the corridor task.
pub fn build_prompt<S: AsRef<str>>(user_text: &str, features: &[S]) -> String {
    PromptTemplate::default().build(user_text, features)
}

/// Feature list and user text recovered from a prompt built by [`PromptTemplate`].
pub(crate) fn split_prompt(prompt: &str) -> Option<(Vec<String>, String)> {
    let f_start = prompt.find(FEATURES_OPEN)? + FEATURES_OPEN.len();
    let f_end = f_start + prompt[f_start..].find(FEATURES_CLOSE)?;
    let features = prompt[f_start..f_end]
        .split(", ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let t_start = prompt.find(USER_TEXT_OPEN)? + USER_TEXT_OPEN.len();
    let t_end = prompt.rfind(USER_TEXT_CLOSE)?;
    (t_end >= t_start).then(|| (features, prompt[t_start..t_end].to_string()))
}
