//! Telegram Bot API channel: one message (or numbered parts) per concept,
//! followed by a three-option poll. Votes arrive as `poll_answer` updates.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::channel::{Channel, ChannelError, IncomingVote, VoteTarget};
use crate::config::ChannelSettings;
use crate::domain::{GameConcept, Vote};
use crate::http::{JsonTransport, UreqTransport};
use crate::state::VoteCounts;

/// Bot API limit on message text, in characters.
pub const MAX_MESSAGE_CHARS: usize = 4096;
const MAX_QUESTION_CHARS: usize = 300;
pub const POLL_OPTIONS: [&str; 3] = ["I like it", "Neutral", "I don't like it"];

/// Poll option index to vote value.
pub fn option_vote(index: u64) -> Option<Vote> {
    match index {
        0 => Some(Vote::Positive),
        1 => Some(Vote::Neutral),
        2 => Some(Vote::Negative),
        _ => None,
    }
}

/// Splits `text` into parts of at most `limit` chars, numbered `(i/n)` when
/// more than one is needed. Prefers breaking at paragraph, line or word ends.
pub fn split_message(text: &str, limit: usize) -> Vec<String> {
    if text.chars().count() <= limit {
        return vec![text.to_string()];
    }
    // Room for a "(NN/NN) " prefix.
    let room = limit.saturating_sub(10).max(1);
    let chars: Vec<char> = text.chars().collect();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + room).min(chars.len());
        let mut cut = end;
        if end < chars.len() {
            let window: String = chars[start..end].iter().collect();
            let boundary = window.rfind("\n\n").or_else(|| window.rfind('\n')).or_else(|| window.rfind(' '));
            if let Some(b) = boundary.filter(|&b| b > 0) {
                cut = start + window[..b].chars().count();
            }
        }
        let part: String = chars[start..cut].iter().collect();
        parts.push(part.trim().to_string());
        start = cut;
        while start < chars.len() && chars[start].is_whitespace() {
            start += 1;
        }
    }
    let n = parts.len();
    parts.into_iter().enumerate().map(|(i, p)| format!("({}/{n}) {p}", i + 1)).collect()
}

pub struct TelegramChannel {
    transport: Arc<dyn JsonTransport>,
    api_base: String,
    token: String,
    chat_id: String,
    anonymous: bool,
    offset: i64,
    timeout: Duration,
}

impl TelegramChannel {
    /// Reads the bot token from the environment variable named in `settings`.
    pub fn from_settings(settings: &ChannelSettings) -> Result<Self, ChannelError> {
        let token = std::env::var(&settings.bot_token_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ChannelError::Auth(format!("environment variable {} is not set", settings.bot_token_env)))?;
        Ok(Self::new(settings, token, Arc::new(UreqTransport::default())))
    }

    pub fn new(settings: &ChannelSettings, token: String, transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            transport,
            api_base: settings.api_base.trim_end_matches('/').to_string(),
            token,
            chat_id: settings.chat_id.clone(),
            anonymous: settings.anonymous_polls,
            offset: 0,
            timeout: Duration::from_secs(30),
        }
    }

    fn call(&self, method: &str, body: Value) -> Result<Value, ChannelError> {
        let url = format!("{}/bot{}/{method}", self.api_base, self.token);
        let reply = self
            .transport
            .post_json(&url, &[], &body, self.timeout)
            .map_err(|e| ChannelError::failure(format!("{method}: {e}")))?;
        if reply.body.get("ok").and_then(Value::as_bool) == Some(true) {
            return Ok(reply.body.get("result").cloned().unwrap_or(Value::Null));
        }
        let description = reply.body.get("description").and_then(Value::as_str).unwrap_or(&reply.raw).to_string();
        match reply.status {
            401 | 403 => Err(ChannelError::Auth(format!("{method}: {description}"))),
            _ => Err(ChannelError::Failure {
                reason: format!("{method} returned {}: {description}", reply.status),
                retry_after: reply.body.pointer("/parameters/retry_after").and_then(Value::as_u64).map(Duration::from_secs),
            }),
        }
    }

    fn question(concept: &GameConcept) -> String {
        let name = concept.sections.first().map(|s| s.text.as_str()).filter(|s| !s.is_empty());
        let q = match name {
            Some(name) => format!("What do you think of {name}?"),
            None => format!("What do you think of {}?", concept.concept_id),
        };
        q.chars().take(MAX_QUESTION_CHARS).collect()
    }
}

impl Channel for TelegramChannel {
    fn name(&self) -> &str {
        "telegram"
    }

    fn publish(&mut self, concept: &GameConcept) -> Result<Option<String>, ChannelError> {
        let parts = split_message(&concept.body, MAX_MESSAGE_CHARS);
        let mut last_message = None;
        for part in &parts {
            let result = self.call("sendMessage", json!({ "chat_id": self.chat_id, "text": part }))?;
            last_message = result.get("message_id").and_then(Value::as_i64);
        }
        let mut poll = json!({
            "chat_id": self.chat_id,
            "question": Self::question(concept),
            "options": POLL_OPTIONS.iter().map(|o| json!({ "text": o })).collect::<Vec<_>>(),
            "is_anonymous": self.anonymous,
        });
        if let Some(id) = last_message {
            poll["reply_parameters"] = json!({ "message_id": id });
        }
        let result = self.call("sendPoll", poll)?;
        let poll_id = result
            .pointer("/poll/id")
            .and_then(Value::as_str)
            .ok_or_else(|| ChannelError::failure("sendPoll reply has no poll id"))?;
        let message_id = result.get("message_id").and_then(Value::as_i64).unwrap_or_default();
        Ok(Some(format!("{poll_id}@{message_id}")))
    }

    fn close(&mut self, _concept: &GameConcept, channel_ref: Option<&str>, _counts: VoteCounts) -> Result<(), ChannelError> {
        // The stopped poll itself shows the final aggregate counts.
        let Some(message_id) = channel_ref.and_then(|r| r.split_once('@')).and_then(|(_, m)| m.parse::<i64>().ok()) else {
            return Ok(());
        };
        self.call("stopPoll", json!({ "chat_id": self.chat_id, "message_id": message_id })).map(|_| ())
    }

    fn poll_votes(&mut self) -> Result<Vec<IncomingVote>, ChannelError> {
        let result = self.call("getUpdates", json!({ "offset": self.offset, "timeout": 0, "allowed_updates": ["poll_answer"] }))?;
        let mut votes = Vec::new();
        for update in result.as_array().into_iter().flatten() {
            if let Some(id) = update.get("update_id").and_then(Value::as_i64) {
                self.offset = self.offset.max(id + 1);
            }
            let Some(answer) = update.get("poll_answer") else { continue };
            let (Some(poll_id), Some(user)) = (
                answer.get("poll_id").and_then(Value::as_str),
                answer.pointer("/user/id").and_then(Value::as_i64),
            ) else {
                continue;
            };
            let options: Vec<u64> = answer.get("option_ids").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_u64).collect();
            let value = match options.first() {
                None => None,
                Some(&i) => match option_vote(i) {
                    Some(v) => Some(v),
                    None => continue,
                },
            };
            votes.push(IncomingVote { user_ref: user.to_string(), target: VoteTarget::ChannelRef(poll_id.to_string()), value });
        }
        Ok(votes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CampaignId, ConceptId, ConceptStatus, Origin, Section};
    use crate::http::{JsonReply, TransportError};
    use std::sync::Mutex;

    #[derive(Default)]
    struct FakeBot {
        calls: Mutex<Vec<(String, Value)>>,
        replies: Mutex<Vec<JsonReply>>,
    }

    impl FakeBot {
        fn ok(result: Value) -> JsonReply {
            let body = json!({ "ok": true, "result": result });
            JsonReply { status: 200, raw: body.to_string(), body }
        }
    }

    impl JsonTransport for FakeBot {
        fn post_json(&self, url: &str, _h: &[(String, String)], body: &Value, _t: Duration) -> Result<JsonReply, TransportError> {
            let method = url.rsplit('/').next().unwrap().to_string();
            self.calls.lock().unwrap().push((method.clone(), body.clone()));
            let mut replies = self.replies.lock().unwrap();
            if !replies.is_empty() {
                return Ok(replies.remove(0));
            }
            Ok(match method.as_str() {
                "sendPoll" => Self::ok(json!({ "message_id": 99, "poll": { "id": "P1" } })),
                _ => Self::ok(json!({ "message_id": 7 })),
            })
        }
    }

    fn concept(body: String) -> GameConcept {
        GameConcept {
            concept_id: ConceptId::new("x-c0001"),
            campaign_id: CampaignId::new("x"),
            body,
            sections: vec![Section::new("name of the game", "Blink", None)],
            origin: Origin::LlmRandom,
            parent_ids: vec![],
            mutation_focus: None,
            created_at_iteration: 0,
            status: ConceptStatus::ActiveUnpublished,
        }
    }

    fn channel(bot: Arc<FakeBot>) -> TelegramChannel {
        let settings = ChannelSettings { chat_id: "-100".into(), ..Default::default() };
        TelegramChannel::new(&settings, "T0KEN".into(), bot)
    }

    #[test]
    fn short_concept_is_one_message_and_one_poll() {
        let bot = Arc::new(FakeBot::default());
        let mut ch = channel(bot.clone());
        let r = ch.publish(&concept("x".repeat(900))).unwrap();
        assert_eq!(r.as_deref(), Some("P1@99"));
        let calls = bot.calls.lock().unwrap();
        assert_eq!(calls.iter().map(|c| c.0.as_str()).collect::<Vec<_>>(), ["sendMessage", "sendPoll"]);
        let poll = &calls[1].1;
        assert_eq!(poll["is_anonymous"], true);
        let options: Vec<&str> = poll["options"].as_array().unwrap().iter().map(|o| o["text"].as_str().unwrap()).collect();
        assert_eq!(options, POLL_OPTIONS);
        assert_eq!(poll["reply_parameters"]["message_id"], 7);
    }

    #[test]
    fn long_concept_is_split_into_numbered_parts() {
        let bot = Arc::new(FakeBot::default());
        let mut ch = channel(bot.clone());
        let body = "word ".repeat(2000);
        ch.publish(&concept(body)).unwrap();
        let calls = bot.calls.lock().unwrap();
        let texts: Vec<&str> = calls.iter().filter(|c| c.0 == "sendMessage").map(|c| c.1["text"].as_str().unwrap()).collect();
        assert_eq!(texts.len(), 3);
        assert!(texts[0].starts_with("(1/3) ") && texts[2].starts_with("(3/3) "));
        assert!(texts.iter().all(|t| t.chars().count() <= MAX_MESSAGE_CHARS));
        assert_eq!(calls.last().unwrap().0, "sendPoll");
    }

    #[test]
    fn split_preserves_all_words() {
        let text = (0..3000).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let parts = split_message(&text, 500);
        let rejoined: Vec<String> = parts
            .iter()
            .flat_map(|p| p.split_once(") ").unwrap().1.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect();
        assert_eq!(rejoined.join(" "), text);
        assert!(parts.iter().all(|p| p.chars().count() <= 500));
    }

    #[test]
    fn poll_answers_map_to_votes() {
        let bot = Arc::new(FakeBot::default());
        bot.replies.lock().unwrap().push(FakeBot::ok(json!([
            { "update_id": 10, "poll_answer": { "poll_id": "P1", "user": { "id": 5 }, "option_ids": [0] } },
            { "update_id": 11, "poll_answer": { "poll_id": "P1", "user": { "id": 6 }, "option_ids": [1] } },
            { "update_id": 12, "poll_answer": { "poll_id": "P1", "user": { "id": 7 }, "option_ids": [2] } },
            { "update_id": 13, "poll_answer": { "poll_id": "P1", "user": { "id": 5 }, "option_ids": [] } },
        ])));
        let mut ch = channel(bot.clone());
        let votes = ch.poll_votes().unwrap();
        let values: Vec<Option<Vote>> = votes.iter().map(|v| v.value).collect();
        assert_eq!(values, [Some(Vote::Positive), Some(Vote::Neutral), Some(Vote::Negative), None]);
        assert_eq!(votes[0].target, VoteTarget::ChannelRef("P1".into()));
        ch.poll_votes().unwrap();
        assert_eq!(bot.calls.lock().unwrap()[1].1["offset"], 14);
    }

    #[test]
    fn rate_limit_reports_retry_after() {
        let bot = Arc::new(FakeBot::default());
        let body = json!({ "ok": false, "description": "Too Many Requests", "parameters": { "retry_after": 3 } });
        bot.replies.lock().unwrap().push(JsonReply { status: 429, raw: body.to_string(), body });
        let mut ch = channel(bot);
        match ch.publish(&concept("hi".into())) {
            Err(ChannelError::Failure { retry_after, .. }) => assert_eq!(retry_after, Some(Duration::from_secs(3))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn close_stops_the_poll_message() {
        let bot = Arc::new(FakeBot::default());
        let mut ch = channel(bot.clone());
        ch.close(&concept("x".into()), Some("P1@99"), VoteCounts::default()).unwrap();
        let calls = bot.calls.lock().unwrap();
        assert_eq!(calls[0].0, "stopPoll");
        assert_eq!(calls[0].1["message_id"], 99);
    }
}
