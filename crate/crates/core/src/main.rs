use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use nights_core::backend::ScriptError;
use nights_core::chronicle::{render_markdown, Storybook};
use nights_core::king::VerdictKind;
use nights_core::session::{GameSession, Phase};
use nights_core::{BackendKind, ConfigError, Engine, Error, Settings};

#[derive(Parser)]
#[command(name = "nights", version, about = "Tell the King a story he cannot refuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play a session in the terminal.
    Play(PlayArgs),
    /// Print a recorded storybook.
    Replay {
        #[arg(long)]
        storybook: PathBuf,
    },
    /// Serve the HTTP API.
    Serve(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// remote, scripted or placeholder.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Fail once the script runs out instead of improvising.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Freeze time at this instant (RFC 3339) and derive ids from the seed.
    #[arg(long)]
    fixed_clock: Option<DateTime<Utc>>,
    #[arg(long)]
    anger_limit: Option<u32>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One player line per row; read from the terminal when absent.
    #[arg(long)]
    inputs: Option<PathBuf>,
}

impl CommonArgs {
    fn settings(&self) -> Result<Settings, ConfigError> {
        let mut s = Settings::from_env()?;
        if let Some(kind) = self.backend {
            s.backend_kind = kind;
        }
        if let Some(script) = &self.script {
            s.script_path = Some(script.clone());
            if self.backend.is_none() {
                s.backend_kind = BackendKind::Scripted;
            }
        }
        s.script_strict |= self.strict;
        if self.seed.is_some() {
            s.seed = self.seed;
        }
        if let Some(dir) = &self.data_dir {
            s.data_dir = dir.clone();
        }
        if self.fixed_clock.is_some() {
            s.fixed_clock = self.fixed_clock;
        }
        if self.anger_limit.is_some() {
            s.anger_limit = self.anger_limit;
        }
        if let Some(lexicon) = &self.lexicon {
            s.lexicon_path = Some(lexicon.clone());
        }
        if let Some(port) = self.port {
            s.port = port;
        }
        Ok(s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match cli.command {
        Command::Play(args) => play(args),
        Command::Replay { storybook } => replay(&storybook),
        Command::Serve(args) => serve(args),
    }
}

fn config_failure(err: ConfigError) -> ExitCode {
    match &err {
        ConfigError::Script(ScriptError::NotFound(path)) => eprintln!("script not found: {path}"),
        _ => eprintln!("error: {err}"),
    }
    ExitCode::from(2)
}

fn serve(args: CommonArgs) -> ExitCode {
    let settings = match args.settings() {
        Ok(s) => s,
        Err(e) => return config_failure(e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(nights_core::server::serve(&settings)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(nights_core::server::ServeError::Config(e)) => config_failure(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn replay(path: &Path) -> ExitCode {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match serde_json::from_str::<Storybook>(&raw) {
        Ok(book) => {
            print!("{}", render_markdown(&book));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{} is not a storybook: {e}", path.display());
            ExitCode::from(2)
        }
    }
}

/// Player lines, from a file or the terminal.
enum Inputs {
    File(std::vec::IntoIter<String>),
    Terminal(io::StdinLock<'static>),
}

impl Inputs {
    fn open(path: Option<&Path>) -> io::Result<Self> {
        match path {
            Some(path) => {
                let lines: Vec<String> = std::fs::read_to_string(path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_owned)
                    .collect();
                Ok(Inputs::File(lines.into_iter()))
            }
            None => Ok(Inputs::Terminal(io::stdin().lock())),
        }
    }

    fn interactive(&self) -> bool {
        matches!(self, Inputs::Terminal(_))
    }

    fn next(&mut self, prompt: &str) -> Option<String> {
        match self {
            Inputs::File(lines) => {
                let line = lines.next()?;
                println!("{prompt}{line}");
                Some(line)
            }
            Inputs::Terminal(stdin) => {
                print!("{prompt}");
                let _ = io::stdout().flush();
                let mut line = String::new();
                match stdin.read_line(&mut line) {
                    Ok(0) | Err(_) => None,
                    Ok(_) => Some(line.trim().to_owned()),
                }
            }
        }
    }
}

fn play(args: PlayArgs) -> ExitCode {
    let settings = match args.common.settings() {
        Ok(s) => s,
        Err(e) => return config_failure(e),
    };
    let engine = match settings.build_engine() {
        Ok(engine) => engine,
        Err(e) => return config_failure(e),
    };
    let mut inputs = match Inputs::open(args.inputs.as_deref()) {
        Ok(inputs) => inputs,
        Err(e) => {
            eprintln!("cannot read inputs: {e}");
            return ExitCode::from(2);
        }
    };
    match run_game(&engine, settings.seed, &mut inputs) {
        Ok(session_id) => {
            println!("storybook: {}", engine.store().storybook_json_path(&session_id).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_game(engine: &Engine, seed: Option<u64>, inputs: &mut Inputs) -> Result<String, Error> {
    let session = engine.create_session(seed, None)?;
    let id = session.id.clone();
    println!("The King {} is listening. (session {id})", session.persona.name);
    if inputs.interactive() {
        println!("Tell your tale one line at a time; /quit ends the night.");
    }
    loop {
        let session = engine.session(&id)?;
        match session.phase {
            Phase::Storytelling => {
                let Some(line) = inputs.next("> ") else { break };
                if line == "/quit" {
                    break;
                }
                match engine.submit_turn(&id, &line) {
                    Ok(outcome) => {
                        let verdict = &outcome.verdict;
                        match verdict.kind {
                            VerdictKind::Continue => {
                                if !verdict.comment.is_empty() {
                                    println!("King: {}", verdict.comment);
                                }
                                println!("King: {}", outcome.king_text);
                            }
                            VerdictKind::Rephrase => println!("King (displeased): {}", outcome.king_text),
                            VerdictKind::AngryCorrect => println!(
                                "King (angry {}/{}): {}",
                                outcome.anger_count,
                                session.anger_limit(),
                                outcome.king_text
                            ),
                        }
                        if let Some(card) = &outcome.new_card {
                            println!("  * forged {} ({}, power {})", card.name, card.category, card.power);
                        }
                        println!("  mood {}", outcome.mood);
                    }
                    Err(e @ (Error::EmptyText | Error::TextTooLong { .. })) if inputs.interactive() => {
                        println!("  {e}");
                    }
                    Err(e) => return Err(e),
                }
            }
            Phase::Battle => {
                if session.battle.is_none() {
                    engine.start_battle(&id)?;
                    continue;
                }
                print_hand(&session);
                let card_id = match inputs.next("play card #> ") {
                    Some(line) if line == "/quit" => break,
                    Some(line) => match pick_card(&session, &line) {
                        Some(card_id) => card_id,
                        None if inputs.interactive() => {
                            println!("  no such card: {line}");
                            continue;
                        }
                        None => return Err(Error::UnknownCard(line)),
                    },
                    // Inputs ran out: play the rest in the order they were forged.
                    None if !inputs.interactive() => match first_unplayed(&session) {
                        Some(card_id) => card_id,
                        None => break,
                    },
                    None => break,
                };
                let play = engine.play_card(&id, &card_id)?;
                println!("  {}", play.player_line);
                println!("  {}", play.effect_description);
                println!("  {}  (King HP {})", play.king_line, play.king_hp_after);
            }
            Phase::Ending | Phase::Closed(_) => break,
        }
    }
    let book = engine.close(&id)?;
    if let Some(ending) = &book.ending {
        println!();
        println!("{}", ending.title);
        for action in &ending.actions {
            println!("  {action}");
        }
        println!("{}", ending.downfall);
        println!("{}", ending.narration);
    }
    println!("outcome: {}", book.outcome.label());
    Ok(id)
}

fn unplayed(session: &GameSession) -> impl Iterator<Item = (usize, &nights_core::forge::WeaponCard)> {
    session
        .weapons
        .iter()
        .enumerate()
        .filter(move |(_, c)| !session.battle.as_ref().is_some_and(|b| b.is_played(&c.id)))
}

fn print_hand(session: &GameSession) {
    if let Some(battle) = &session.battle {
        println!("King HP {} | round {}", battle.king_hp, battle.round);
    }
    for (i, card) in unplayed(session) {
        println!("  [{}] {} ({}, power {})", i + 1, card.name, card.category, card.power);
    }
}

fn first_unplayed(session: &GameSession) -> Option<String> {
    unplayed(session).next().map(|(_, c)| c.id.clone())
}

/// A 1-based card number or a card id.
fn pick_card(session: &GameSession, line: &str) -> Option<String> {
    if let Ok(n) = line.parse::<usize>() {
        return session.weapons.get(n.checked_sub(1)?).map(|c| c.id.clone());
    }
    session.weapons.iter().find(|c| c.id == line).map(|c| c.id.clone())
}
