//! Binary event files: write, read back, and reject a damaged copy.
//!
//! ```text
//! cargo run --release --example event_io
//! ```

use epgi::event::{ElectronEvent, PhotonEvent, ValidatedStream};
use epgi::io::{self, IoError};
use epgi::source::{background_streams, BeamProfile};
use epgi::rng::{substream_rng, Substream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("epgi_event_io");
    std::fs::create_dir_all(&dir)?;
    let mut rng = substream_rng(1, Substream::Test, 0);
    let (e, p) = background_streams(1e5, 5e4, 1.0, &BeamProfile::default(), &mut rng);

    let (ep, pp) = (dir.join("electrons.epgi"), dir.join("photons.epgi"));
    io::write_events(&ep, &e)?;
    io::write_events(&pp, &p)?;
    let e2: ValidatedStream<ElectronEvent> = io::read_events(&ep)?;
    let p2: ValidatedStream<PhotonEvent> = io::read_events(&pp)?;
    // rate and seed are run provenance, not part of the file
    assert_eq!(e2.events, e.events);
    assert_eq!(p2.events, p.events);
    assert_eq!((e2.header.duration_ps, e2.header.fov), (e.header.duration_ps, e.header.fov));
    println!(
        "{} electrons ({} bytes), {} photons ({} bytes) round-tripped",
        e2.len(),
        std::fs::metadata(&ep)?.len(),
        p2.len(),
        std::fs::metadata(&pp)?.len()
    );

    let bytes = std::fs::read(&ep)?;
    let cut = dir.join("truncated.epgi");
    std::fs::write(&cut, &bytes[..bytes.len() - 5])?;
    match io::read_events::<ElectronEvent>(&cut) {
        Err(err @ IoError::TruncatedRecord { .. }) => println!("truncated copy rejected: {err}"),
        Err(err) => println!("unexpected error: {err}"),
        Ok(_) => println!("unexpected success"),
    }
    match io::read_events::<PhotonEvent>(&ep) {
        Err(err) => println!("wrong kind rejected: {err}"),
        Ok(_) => println!("unexpected success"),
    }
    Ok(())
}
