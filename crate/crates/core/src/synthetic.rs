//! Generated ticket corpora for tests, benchmarks and demonstrations. Every
//! generator is a pure function of its seed.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::run::EvalRecord;
use crate::parser::RawTicket;

/// Threshold under which [`login_fixture_tickets`] has its intended links.
pub const LOGIN_FIXTURE_THETA: f64 = 0.75;

pub const LOGIN_FIXTURE_STEPS: &str = "1. Open linkedin.com in a fresh browser session. \
2. Enter a valid member email and password. 3. Press Sign in and observe the page reload without signing in.";

/// Four tickets around a login failure: ENT-22970 is a clone of
/// PORT-133061 and its title is close to ENT-1744 and ENT-3547, which are
/// not close to each other.
pub fn login_fixture_tickets() -> Vec<RawTicket> {
    vec![
        RawTicket::new(
            "ENT-22970",
            "LinkedIn login fails for member",
            &format!(
                "Description: User can't log in to LinkedIn after the latest release; the sign in page reloads.\n\
                 Priority: Major\n\
                 Steps to Reproduce: {LOGIN_FIXTURE_STEPS}\n\
                 Fix Solution: Clear the stale session cookie and retry; the auth service will drop the bad cookie."
            ),
        )
        .with_link("clone", "PORT-133061"),
        RawTicket::new(
            "PORT-133061",
            "Port authentication cookie handling to sales portal",
            "Description: Sales portal still uses the old cookie handling.\n\
             Fix Solution: Reuse the shared session library.",
        ),
        RawTicket::new(
            "ENT-1744",
            "LinkedIn login fails for recruiter",
            "Description: Recruiters are sent back to the sign in page.\n\
             Priority: Minor\n\
             Fix Solution: Grant the recruiter seat before redirecting.",
        ),
        RawTicket::new(
            "ENT-3547",
            "LinkedIn login fails member session",
            "Description: Member sessions expire right after sign in.\n\
             Fix Solution: Extend the session token lifetime.",
        ),
    ]
}

const WORDS: &[&str] = &[
    "account", "action", "agent", "alert", "archive", "audit", "badge", "banner", "batch", "billing",
    "branch", "browser", "buffer", "cache", "calendar", "campaign", "caption", "cart", "catalog",
    "channel", "chart", "checkout", "client", "cluster", "column", "comment", "config", "connector",
    "contact", "counter", "coupon", "cursor", "dashboard", "database", "dataset", "deadline", "device",
    "digest", "domain", "draft", "editor", "email", "endpoint", "event", "export", "feed", "field",
    "filter", "folder", "font", "form", "gateway", "graph", "group", "header", "history", "icon",
    "image", "import", "inbox", "index", "invoice", "job", "kernel", "label", "layout", "ledger",
    "license", "link", "locale", "lock", "log", "mailbox", "map", "member", "menu", "message",
    "metric", "mobile", "module", "monitor", "network", "node", "note", "notice", "order", "owner",
    "package", "page", "panel", "partner", "password", "payment", "pipeline", "plan", "player",
    "policy", "portal", "post", "preview", "profile", "project", "proxy", "queue", "quota", "record",
    "region", "release", "replica", "report", "request", "router", "rule", "schedule", "schema",
    "script", "search", "seat", "secret", "sensor", "server", "service", "session", "setting",
    "shard", "sheet", "signal", "sitemap", "slot", "snapshot", "socket", "source", "storage",
    "stream", "subscription", "survey", "table", "tag", "task", "team", "template", "tenant",
    "thread", "token", "topic", "tracker", "upload", "user", "vault", "vendor", "video", "viewer",
    "volume", "wallet", "webhook", "widget", "window", "worker", "zone",
];

const SYMPTOMS: &[&str] = &[
    "stalls", "crashes", "freezes", "disappears", "duplicates", "truncates", "misaligns", "flickers",
    "leaks", "hangs", "rejects", "drops", "overflows", "corrupts", "lags", "resets",
];

fn phrase(rng: &mut impl Rng, pool: &[&str], n: usize) -> String {
    (0..n).map(|_| *pool.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn phrase_between(rng: &mut impl Rng, pool: &[&str], lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..hi);
    phrase(rng, pool, n)
}

/// `n` tickets with random titles over a small vocabulary, random section
/// subsets, occasional code and priority fields, and random explicit links.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<RawTicket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let title_pool = &WORDS[..24];
    let priorities = ["Blocker", "Critical", "Major", "Minor", "Trivial"];
    let ids: Vec<String> = (0..n).map(|i| format!("SYN-{i:04}")).collect();
    let mut tickets = Vec::with_capacity(n);
    for id in &ids {
        let title_len = rng.random_range(2..=5);
        let title = format!("{} {}", phrase(&mut rng, title_pool, title_len), SYMPTOMS.choose(&mut rng).unwrap());
        let mut body = Vec::new();
        if rng.random_bool(0.3) {
            body.push(format!("Summary: {}", phrase_between(&mut rng, WORDS, 3, 8)));
        }
        if rng.random_bool(0.9) {
            body.push(format!("Description: {}", phrase_between(&mut rng, WORDS, 5, 60)));
        }
        if rng.random_bool(0.5) {
            body.push(format!("Priority: {}", priorities.choose(&mut rng).unwrap()));
        }
        if rng.random_bool(0.6) {
            body.push(format!("Steps to Reproduce: {}", phrase_between(&mut rng, WORDS, 5, 40)));
        }
        if rng.random_bool(0.7) {
            body.push(format!("Fix Solution: {}", phrase_between(&mut rng, WORDS, 5, 40)));
        }
        if rng.random_bool(0.15) {
            body.push(format!("```\n{}\n```", phrase(&mut rng, WORDS, 6)));
        }
        let mut ticket = RawTicket::new(id, &title, &body.join("\n"));
        if n > 1 && rng.random_bool(0.2) {
            let target = ids.choose(&mut rng).unwrap();
            if target != id {
                let relation = ["clone", "caused_by", "relates_to"].choose(&mut rng).unwrap();
                ticket = ticket.with_link(relation, target);
            }
        }
        tickets.push(ticket);
    }
    tickets
}

/// Where the fix starts in a flattened adversarial ticket, in whitespace
/// tokens. With 256/32 chunking, chunk 1 covers tokens 224..480 and chunk 2
/// starts at 448, so a fix over 440..500 lies wholly inside neither.
pub const ADVERSARIAL_FIX_START: usize = 440;
pub const ADVERSARIAL_FIX_TOKENS: usize = 60;

/// Long tickets whose fix is split across baseline chunk boundaries and
/// whose descriptions keep mentioning the next ticket's component and
/// symptom. Returns the tickets and one "how to fix" query per ticket with
/// the fix text as gold answer.
pub fn adversarial_corpus(n: usize, seed: u64) -> (Vec<RawTicket>, Vec<EvalRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = &WORDS[40..];
    let mut components: Vec<(&str, &str)> = Vec::new();
    while components.len() < n {
        let pair = (*WORDS[..40].choose(&mut rng).unwrap(), *WORDS[..40].choose(&mut rng).unwrap());
        if pair.0 != pair.1 && !components.contains(&pair) {
            components.push(pair);
        }
    }
    let titles: Vec<String> = components
        .iter()
        .enumerate()
        .map(|(i, (a, b))| format!("{a} {b} {}", SYMPTOMS[i % SYMPTOMS.len()]))
        .collect();

    let mut tickets = Vec::with_capacity(n);
    let mut golden = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("ADV-{i:03}");
        let title = &titles[i];
        let next = &titles[(i + 1) % n];
        let title_tokens = title.split_whitespace().count();
        // flattened layout: title, "Description:", description, "Fix", "Solution:", fix
        let description_tokens = ADVERSARIAL_FIX_START - title_tokens - 3;
        let mut description: Vec<String> = Vec::with_capacity(description_tokens);
        while description.len() < description_tokens {
            if rng.random_bool(0.12) {
                description.extend(next.split_whitespace().map(str::to_string));
            } else {
                description.push(filler.choose(&mut rng).unwrap().to_string());
            }
        }
        description.truncate(description_tokens);
        let mut fix: Vec<String> = vec![format!("patch{i}")];
        fix.extend((1..ADVERSARIAL_FIX_TOKENS).map(|_| filler.choose(&mut rng).unwrap().to_string()));
        let fix = fix.join(" ");
        let steps = phrase(&mut rng, filler, 150);
        let body = format!(
            "Description: {}\nFix Solution: {fix}\nSteps to Reproduce: {steps}",
            description.join(" ")
        );
        tickets.push(RawTicket::new(&id, title, &body));
        golden.push(EvalRecord {
            query: format!("how to fix {title}"),
            gold_ticket_ids: [id].into(),
            gold_answer: fix,
        });
    }
    (tickets, golden)
}
