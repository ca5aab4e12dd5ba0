//! Timed publication of concepts and vote collection through channels.

pub mod channel;
pub mod console;
pub mod schedule;
pub mod telegram;

pub use channel::{Channel, ChannelError, IncomingVote, VoteTarget, WebChannel};
pub use console::{parse_vote_line, ConsoleChannel};
pub use schedule::PublishSchedule;
pub use telegram::TelegramChannel;
