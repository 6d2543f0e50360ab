//! gearctl: campaign setup, resident onboarding, fleet monitoring and data
//! transfer for a datagear server.

mod commands;
mod ledger;
mod output;
mod settings;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{ExportArgs, Failure, SimulateArgs};
use output::parse_time;
use settings::{FileConfig, Format, Settings};

#[derive(Parser)]
#[command(name = "gearctl", version, about = "Deployer tool for datagear measurement campaigns")]
struct Cli {
    /// TOML file with defaults for the global options.
    #[arg(long, global = true, env = "GEARCTL_CONFIG")]
    config: Option<PathBuf>,
    /// Base URL of the server.
    #[arg(long, global = true, env = "GEARCTL_SERVER_URL")]
    server_url: Option<String>,
    /// File holding the admin token.
    #[arg(long, global = true, env = "GEARCTL_ADMIN_TOKEN_FILE")]
    admin_token_file: Option<PathBuf>,
    /// Pseudonym ledger (CSV). Stays on this machine.
    #[arg(long, global = true, env = "GEARCTL_LEDGER")]
    ledger: Option<PathBuf>,
    /// Work directly on a server store file instead of over HTTP.
    #[arg(long, global = true, env = "GEARCTL_STORE")]
    store: Option<PathBuf>,
    #[arg(long, global = true, value_enum, env = "GEARCTL_FORMAT")]
    format: Option<Format>,
    /// Base of activation links; defaults to the server URL.
    #[arg(long, global = true, env = "GEARCTL_LINK_BASE")]
    link_base: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Campaign(CampaignCmd),
    #[command(subcommand)]
    Account(AccountCmd),
    /// Data health of every source: latest upload and overdue flag.
    Monitor {
        #[arg(long)]
        campaign: Option<i64>,
        /// Evaluate at this instant (Unix seconds or RFC 3339) instead of now.
        #[arg(long, value_parser = parse_time)]
        at: Option<i64>,
    },
    /// Load long-format CSV as produced by `export`.
    Import {
        #[arg(long)]
        campaign: i64,
        file: PathBuf,
    },
    /// Write a campaign's measurements as long-format CSV.
    Export {
        #[arg(long)]
        campaign: i64,
        /// Account id or ledger pseudonym.
        #[arg(long)]
        account: Option<String>,
        #[arg(long, value_parser = parse_time)]
        from: Option<i64>,
        #[arg(long, value_parser = parse_time)]
        to: Option<i64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a simulated fleet. Uses an in-process server unless --server-url is given.
    Simulate {
        /// Scenario TOML; the built-in five-household fleet when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        households: Option<u32>,
        /// Also write the full report as JSON.
        #[arg(long)]
        report_json: Option<PathBuf>,
        /// Write the event log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the HTTP server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
}

#[derive(Subcommand)]
enum CampaignCmd {
    /// Create a campaign from a TOML file; prints its id.
    Create { file: PathBuf },
    List,
}

#[derive(Subcommand)]
enum AccountCmd {
    /// Create an account and print its activation link once.
    Create {
        #[arg(long)]
        campaign: i64,
        #[arg(long)]
        pseudonym: String,
        /// Free text kept only in the ledger.
        #[arg(long, default_value = "")]
        note: String,
    },
    List {
        #[arg(long)]
        campaign: i64,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        server_url: cli.server_url,
        admin_token_file: cli.admin_token_file,
        ledger: cli.ledger,
        store: cli.store,
        format: cli.format,
        link_base: cli.link_base,
    };
    let s = Settings::merge(flags, file);
    match cli.command {
        Command::Campaign(CampaignCmd::Create { file }) => commands::campaign_create(&s, &file),
        Command::Campaign(CampaignCmd::List) => commands::campaign_list(&s),
        Command::Account(AccountCmd::Create {
            campaign,
            pseudonym,
            note,
        }) => commands::account_create(&s, campaign, &pseudonym, &note),
        Command::Account(AccountCmd::List { campaign }) => commands::account_list(&s, campaign),
        Command::Monitor { campaign, at } => commands::monitor(&s, campaign, at),
        Command::Import { campaign, file } => commands::import(&s, campaign, &file),
        Command::Export {
            campaign,
            account,
            from,
            to,
            out,
        } => commands::export(
            &s,
            ExportArgs {
                campaign,
                account,
                from,
                to,
                out,
            },
        ),
        Command::Simulate {
            scenario,
            seed,
            days,
            households,
            report_json,
            log,
        } => commands::simulate(
            &s,
            SimulateArgs {
                scenario,
                seed,
                days,
                households,
                report_json,
                log,
            },
        ),
        Command::Serve { listen } => commands::serve(&s, &listen),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("gearctl: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
