use std::io::BufRead;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use chrono::Utc;

use ideaforge_api::{serve, ApiState};
use ideaforge_core::campaign::{Campaign, CampaignError};
use ideaforge_core::config::{CampaignConfig, ChannelKind};
use ideaforge_core::publish::{Channel, ConsoleChannel, TelegramChannel, WebChannel};
use ideaforge_core::store::EventLog;

use crate::Failure;

const CONSOLE_TICK: Duration = Duration::from_millis(200);
const SERVICE_TICK: Duration = Duration::from_secs(1);

/// Where a campaign's log lives when the config does not say: next to the config.
pub fn default_log_path(config_path: &Path) -> PathBuf {
    config_path.with_extension("ndjson")
}

pub fn run(config_path: &Path) -> Result<(), Failure> {
    let config = CampaignConfig::load(config_path)?.validated()?;
    let log_path = config.log_path.clone().unwrap_or_else(|| default_log_path(config_path));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;

    match config.channel.kind {
        ChannelKind::Console => {
            let (tx, rx) = mpsc::channel();
            let done = Arc::new(AtomicBool::new(false));
            let eof = done.clone();
            std::thread::spawn(move || {
                for line in std::io::stdin().lock().lines().map_while(Result::ok) {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
                eof.store(true, Ordering::SeqCst);
            });
            watch_interrupt(&runtime, done.clone());
            let channel = ConsoleChannel::new(Box::new(std::io::stdout()), Some(rx));
            let mut campaign = open(config, &log_path, Box::new(channel))?;
            drive(&mut campaign, CONSOLE_TICK, &done)
        }
        ChannelKind::Telegram => {
            let channel = TelegramChannel::from_settings(&config.channel).map_err(|e| Failure::Config(e.to_string()))?;
            let done = Arc::new(AtomicBool::new(false));
            watch_interrupt(&runtime, done.clone());
            let mut campaign = open(config, &log_path, Box::new(channel))?;
            drive(&mut campaign, SERVICE_TICK, &done)
        }
        ChannelKind::Web => {
            let addr: SocketAddr = config
                .channel
                .listen
                .parse()
                .map_err(|e| Failure::Config(format!("channel.listen {:?}: {e}", config.channel.listen)))?;
            let admin = std::env::var(&config.channel.admin_token_env).ok().filter(|t| !t.is_empty());
            if admin.is_none() {
                log::warn!("{} is not set; admin endpoints are disabled", config.channel.admin_token_env);
            }
            let campaign = open(config, &log_path, Box::new(WebChannel))?;
            let state = ApiState::new(admin, None);
            state.insert(campaign);
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            runtime
                .block_on(serve(state, addr, SERVICE_TICK, shutdown))
                .map_err(|e| Failure::Runtime(format!("server on {addr}: {e}")))
        }
    }
}

fn watch_interrupt(runtime: &tokio::runtime::Runtime, done: Arc<AtomicBool>) {
    runtime.spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            done.store(true, Ordering::SeqCst);
        }
    });
}

/// Resumes the campaign from its log, or records a new one, and makes sure it is running.
fn open(config: CampaignConfig, log_path: &Path, channel: Box<dyn Channel>) -> Result<Campaign, Failure> {
    let now = Utc::now();
    let existing = std::fs::metadata(log_path).map(|m| m.len() > 0).unwrap_or(false);
    let mut campaign = if existing {
        let (log, events) = EventLog::open(log_path)?;
        if events.is_empty() {
            // Only a torn first record was there, and opening cut it off.
            Campaign::create(config, log, channel, None, None, now)?
        } else {
            log::info!("resuming from {} events in {}", events.len(), log_path.display());
            Campaign::resume(log, &events, channel, None, now)?
        }
    } else {
        Campaign::create(config, EventLog::create(log_path)?, channel, None, None, now)?
    };
    if !campaign.state().running {
        campaign.start(now)?;
    }
    Ok(campaign)
}

/// Ticks until `done` is set. Generation failures are retried on the next tick.
fn drive(campaign: &mut Campaign, period: Duration, done: &AtomicBool) -> Result<(), Failure> {
    loop {
        // Read before ticking so that every line received before EOF is processed.
        let finish = done.load(Ordering::SeqCst);
        match campaign.tick(Utc::now()) {
            Ok(report) => {
                for record in &report.activations {
                    log::info!("activation {} created {}", record.iteration, record.offspring_id);
                }
            }
            Err(CampaignError::Engine(e)) => log::error!("activation failed, will retry: {e}"),
            Err(e) => return Err(e.into()),
        }
        if finish {
            return Ok(());
        }
        std::thread::sleep(period);
    }
}
