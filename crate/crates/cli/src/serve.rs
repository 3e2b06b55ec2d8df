use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::routing::get;
use axum::Router;
use sensor_protocol::{
    receiver_router, sensor_proxy as proxy_app, spawn_delivery, spawn_refetcher, Digest,
    ExclusionRules, Notifier, Robot, Sensor, SensorConfig,
};
use tokio::net::TcpListener;

use crate::Failure;

#[derive(clap::Args)]
pub struct ProxyArgs {
    /// Address to listen on.
    #[arg(long, env = "SENSORSIM_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Origin server base URL, e.g. `http://127.0.0.1:8000`.
    #[arg(long, env = "SENSORSIM_ORIGIN")]
    origin: String,
    /// Robot base URL; notifications go to `<robot>/sensor-notify`.
    #[arg(long, env = "SENSORSIM_ROBOT")]
    robot: String,
    /// File of excluded path prefixes, one per line.
    #[arg(long, env = "SENSORSIM_EXCLUSIONS")]
    exclusions: Option<PathBuf>,
    /// Also notify the first time a URL is served.
    #[arg(long, env = "SENSORSIM_NOTIFY_ON_NEW")]
    notify_on_new: bool,
    /// Outbox size; the oldest notification is dropped when full.
    #[arg(long, env = "SENSORSIM_QUEUE_CAPACITY", default_value_t = 10_000)]
    queue_capacity: usize,
    /// Prefix of URLs sent to the robot. Defaults to `http://<listen>`.
    #[arg(long, env = "SENSORSIM_PUBLIC_BASE")]
    public_base: Option<String>,
}

#[derive(clap::Args)]
pub struct RobotArgs {
    /// Address to listen on.
    #[arg(long, env = "SENSORSIM_LISTEN", default_value = "127.0.0.1:8090")]
    listen: SocketAddr,
    /// Seconds during which a repeated (url, digest) is ignored.
    #[arg(long, env = "SENSORSIM_REFETCH_WINDOW", default_value_t = 60)]
    refetch_window: u64,
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))
}

fn check_base(flag: &str, url: &str) -> Result<String, Failure> {
    match reqwest::Url::parse(url) {
        Ok(u) if u.scheme() == "http" => Ok(url.trim_end_matches('/').to_owned()),
        Ok(_) => Err(Failure::Usage(format!("invalid `--{flag}`: only http:// is supported"))),
        Err(e) => Err(Failure::Usage(format!("invalid `--{flag}`: {e}"))),
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, Failure> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::Runtime(format!("cannot bind {addr}: {e}")))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub fn sensor_proxy(args: ProxyArgs) -> Result<(), Failure> {
    let origin = check_base("origin", &args.origin)?;
    let robot = check_base("robot", &args.robot)?;
    let public_base = match &args.public_base {
        Some(b) => check_base("public-base", b)?,
        None => format!("http://{}", args.listen),
    };
    if args.queue_capacity == 0 {
        return Err(Failure::Usage("invalid `--queue-capacity`: must be positive".into()));
    }
    let rules = match &args.exclusions {
        Some(path) => ExclusionRules::load(path)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        None => ExclusionRules::default(),
    };
    runtime()?.block_on(async move {
        let listener = bind(args.listen).await?;
        let client = reqwest::Client::new();
        let notifier = Arc::new(Notifier::new(args.queue_capacity));
        let sensor = Arc::new(Sensor::new(
            SensorConfig {
                public_base,
                notify_on_new: args.notify_on_new,
                ..SensorConfig::default()
            },
            rules,
            notifier.clone(),
        ));
        spawn_delivery(notifier, robot, client.clone());
        let app = proxy_app(&origin, client, sensor.clone());
        tracing::info!(listen = %args.listen, origin = %origin, "sensor proxy up");
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("sensor-proxy stopped: {}", sensor.stats());
        Ok(())
    })
}

fn robot_stats(robot: &Robot) -> String {
    let s = &robot.stats;
    format!(
        "accepted={} duplicates={} malformed={} refetched={} refetch_failures={} indexed={}",
        s.accepted.load(Ordering::Relaxed),
        s.duplicates.load(Ordering::Relaxed),
        s.malformed.load(Ordering::Relaxed),
        s.refetched.load(Ordering::Relaxed),
        s.refetch_failures.load(Ordering::Relaxed),
        robot.index_len()
    )
}

pub fn robotd(args: RobotArgs) -> Result<(), Failure> {
    runtime()?.block_on(async move {
        let listener = bind(args.listen).await?;
        let robot = Arc::new(Robot::new(Duration::from_secs(args.refetch_window)));
        spawn_refetcher(robot.clone(), reqwest::Client::new());
        tracing::info!(listen = %args.listen, "robot endpoint up");
        axum::serve(listener, receiver_router(robot.clone()))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("robotd stopped: {}", robot_stats(&robot));
        Ok(())
    })
}

type Body = Arc<Mutex<&'static [u8]>>;

async fn toy_page(State(body): State<Body>) -> &'static [u8] {
    *body.lock().unwrap()
}

async fn serve_local(app: Router) -> Result<String, Failure> {
    let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let addr = listener
        .local_addr()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(format!("http://{addr}"))
}

pub fn selftest() -> Result<(), Failure> {
    runtime()?.block_on(async {
        let body: Body = Arc::new(Mutex::new(b"v1"));
        let origin = serve_local(
            Router::new()
                .route("/page", get(toy_page))
                .with_state(body.clone()),
        )
        .await?;
        let robot = Arc::new(Robot::new(Duration::from_secs(60)));
        let robot_base = serve_local(receiver_router(robot.clone())).await?;
        let client = reqwest::Client::new();
        spawn_refetcher(robot.clone(), client.clone());

        let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
        let proxy = format!(
            "http://{}",
            listener
                .local_addr()
                .map_err(|e| Failure::Runtime(e.to_string()))?
        );
        let notifier = Arc::new(Notifier::new(16));
        let sensor = Arc::new(Sensor::new(
            SensorConfig {
                public_base: proxy.clone(),
                ..SensorConfig::default()
            },
            ExclusionRules::default(),
            notifier.clone(),
        ));
        spawn_delivery(notifier, robot_base, client.clone());
        let app = proxy_app(&origin, client.clone(), sensor.clone());
        tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });

        let fetch = |url: String| {
            let client = client.clone();
            async move {
                client
                    .get(url)
                    .send()
                    .await
                    .map_err(|e| Failure::Runtime(e.to_string()))
            }
        };
        let page = format!("{proxy}/page");
        fetch(page.clone()).await?;
        fetch(page.clone()).await?;
        *body.lock().unwrap() = b"v2";
        fetch(page.clone()).await?;

        let mut indexed = None;
        for _ in 0..500 {
            indexed = robot.indexed(&page);
            if indexed.is_some() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let stats = sensor.stats();
        println!("selftest sensor: {stats}");
        println!("selftest robot: {}", robot_stats(&robot));
        let expected = Digest::of(b"v2");
        match indexed {
            Some(entry) if entry.digest == expected && stats.notifications == 1 => {
                println!("selftest: PASS change v1->v2 indexed with digest {expected}");
                Ok(())
            }
            Some(entry) => Err(Failure::Runtime(format!(
                "selftest: FAIL robot indexed digest {} after {} notifications",
                entry.digest, stats.notifications
            ))),
            None => Err(Failure::Runtime("selftest: FAIL change never reached the robot".into())),
        }
    })
}
