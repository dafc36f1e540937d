//! Drives one streaming session step by step: the model speaks a context
//! while a command is spoken into its listening channel, and stops itself.
//!
//!     cargo run --release --example duplex_session -- <lslm.ckpt> [context] [onset]

use std::sync::Arc;

use lslm::model::LslmModel;
use lslm::runtime::{MissingFrame, SamplerConfig, Session};
use lslm::vocab::SIL;
use lslm::world::{paint_command, WorldConfig, WorldGen};

fn main() -> lslm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("lslm.ckpt");
    let context = args.get(1).map(String::as_str).unwrap_or("listening");
    let onset: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    let model = Arc::new(LslmModel::load(path)?);
    let world = WorldConfig::default();
    let gen = WorldGen::new(world.clone())?;
    let command = gen.all_commands()[0];
    let mut frames = vec![SIL; 128];
    paint_command(&mut frames, onset, &command)?;

    let mut s = Session::start(Arc::clone(&model), context, SamplerConfig::default(), MissingFrame::Reject)?;
    println!("speaking {context:?}; command {command:?} from frame {onset}");
    loop {
        let j = s.steps();
        if j > 0 {
            s.feed_listen(&[frames[j - 1]])?;
        }
        let out = s.step()?;
        let heard = if j > 0 { frames[j - 1] } else { SIL };
        println!("step {:>3}  heard {heard:>2}  token {:>2}  P(IRQ) {:.2e}", out.step, out.token, out.irq_prob);
        if let Some(stop) = out.stop {
            let delay = stop.step as i64 - onset as i64;
            println!("stopped by {} at step {} ({delay} steps after onset)", stop.reason.name(), stop.step);
            break;
        }
    }
    let result = s.into_result(Some(onset))?;
    let (said, edits) = world.codebook().invert(result.speech());
    println!("spoke {said:?} ({edits} undecodable tokens)");
    Ok(())
}
