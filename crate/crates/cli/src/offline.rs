use std::fs;
use std::path::Path;

use chrono::Duration;

use ideaforge_core::analytics::{
    activation_lengths, eval_timeline, length_series, lengths_csv, parse_stopwords, population_bodies, timeline_csv, word_frequencies,
    words_csv, PopulationPick,
};
use ideaforge_core::config::CampaignConfig;
use ideaforge_core::sim::{simulate as run_simulation, VoterSpec};
use ideaforge_core::state::replay as replay_state;
use ideaforge_core::store::{read_log, Event, EventLog};

use crate::{Export, Failure, Population};

const BUCKET_MINUTES: i64 = 60;

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn words(events: &[Event], pick: PopulationPick, stopwords: &[String]) -> Result<String, Failure> {
    let bodies = population_bodies(events, pick)?;
    Ok(words_csv(&word_frequencies(bodies.iter().map(String::as_str), stopwords)))
}

pub fn simulate(config: &Path, voters: &Path, iterations: u64, seed: u64, out: &Path) -> Result<(), Failure> {
    let config = CampaignConfig::load(config)?.validated()?;
    let spec = VoterSpec::load(voters)?;
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;

    // A simulation can simply be rerun, so per-append fsync buys nothing.
    let log_path = out.join("events.ndjson");
    let log = EventLog::create(&log_path)?.without_sync();
    let run = run_simulation(config, &spec, iterations, seed, log)?;

    let events = read_log(&log_path)?;
    write(&out.join("timeline.csv"), &timeline_csv(&eval_timeline(&events, Duration::minutes(BUCKET_MINUTES))))?;
    write(&out.join("lengths.csv"), &lengths_csv(&length_series(activation_lengths(&events)?)))?;
    write(&out.join("words_initial.csv"), &words(&events, PopulationPick::Initial, &[])?)?;
    write(&out.join("words_final.csv"), &words(&events, PopulationPick::Final, &[])?)?;
    let json = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
    write(&out.join("summary.json"), &json)?;
    let text = run.summary.to_string();
    write(&out.join("summary.txt"), &format!("{text}\n"))?;
    println!("{text}");
    println!("output: {}", out.display());
    Ok(())
}

pub fn replay(log: &Path) -> Result<(), Failure> {
    let events = read_log(log)?;
    let state = replay_state(&events)?;
    let id = state.campaign_id.as_ref().map(|c| c.to_string()).unwrap_or_default();
    println!("campaign_id: {id}");
    println!("events: {}", state.last_seq);
    println!("running: {}", state.running);
    println!("iterations: {}", state.population.iteration);
    println!("concepts_created: {}", state.concepts.len());
    println!("population: {}", state.population.members.len());
    println!("published_members: {}", state.published_members().len());
    println!("accepted_votes: {}", state.accepted_votes);
    println!("overwritten_votes: {}", state.overwritten_votes);
    println!("state_digest: {}", state.digest());
    Ok(())
}

pub fn export(
    log: &Path,
    what: Export,
    out: Option<&Path>,
    bucket_minutes: i64,
    stopwords: Option<&Path>,
    population: Population,
) -> Result<(), Failure> {
    if bucket_minutes < 1 {
        return Err(Failure::Config("--bucket-minutes must be at least 1".into()));
    }
    let stop = match stopwords {
        Some(p) => parse_stopwords(&fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?),
        None => Vec::new(),
    };
    let events = read_log(log)?;
    let csv = match what {
        Export::Timeline => timeline_csv(&eval_timeline(&events, Duration::minutes(bucket_minutes))),
        Export::Lengths => lengths_csv(&length_series(activation_lengths(&events)?)),
        Export::Words => {
            let pick = if population == Population::Initial { PopulationPick::Initial } else { PopulationPick::Final };
            words(&events, pick, &stop)?
        }
    };
    match out {
        Some(path) => write(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
