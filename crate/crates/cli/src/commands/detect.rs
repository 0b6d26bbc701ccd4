//! `detect`: stream trajectories in, stream anomaly events out.

use std::io::{BufRead, Write};

use crowdwatch_core::domain::validate_stream;
use crowdwatch_core::{Observation, Pipeline};

use crate::commands::CliError;
use crate::config::Resolved;
use crate::formats::{self, Format, ParseError, RecordReader};

pub struct DetectOptions {
    pub format: Format,
    pub verbose_scores: bool,
    pub retain_events_only: bool,
}

/// Frame-batched streaming: a batch is emitted as soon as a record for a
/// later frame is read, so output for frame t never waits on frame t+1's
/// full batch, let alone the end of input.
struct FrameBatcher<R: BufRead> {
    reader: RecordReader<R>,
    pending: Option<(usize, u64, Observation)>,
    done: bool,
}

impl<R: BufRead> FrameBatcher<R> {
    fn new(reader: RecordReader<R>) -> Self {
        FrameBatcher {
            reader,
            pending: None,
            done: false,
        }
    }

    fn next_batch(&mut self) -> Result<Option<(u64, Vec<Observation>)>, ParseError> {
        if self.done {
            return Ok(None);
        }
        let (line, frame, first) = match self.pending.take() {
            Some(p) => p,
            None => match self.reader.next_record()? {
                None => {
                    self.done = true;
                    return Ok(None);
                }
                Some((line, record)) => (line, record.frame, record.observation()),
            },
        };
        if !first.position.is_finite() {
            return Err(ParseError {
                line,
                reason: "non-finite coordinate".into(),
            });
        }
        let mut batch = vec![first];
        loop {
            match self.reader.next_record()? {
                None => {
                    self.done = true;
                    return Ok(Some((frame, batch)));
                }
                Some((next_line, record)) => {
                    let obs = record.observation();
                    if !obs.position.is_finite() {
                        return Err(ParseError {
                            line: next_line,
                            reason: "non-finite coordinate".into(),
                        });
                    }
                    if record.frame < frame {
                        return Err(ParseError {
                            line: next_line,
                            reason: format!(
                                "frame {} after frame {frame}: input must be frame-ordered",
                                record.frame
                            ),
                        });
                    }
                    if record.frame > frame {
                        self.pending = Some((next_line, record.frame, obs));
                        return Ok(Some((frame, batch)));
                    }
                    batch.push(obs);
                }
            }
        }
    }
}

pub fn run(
    input: impl BufRead,
    out: &mut impl Write,
    resolved: &Resolved,
    options: &DetectOptions,
) -> Result<(), CliError> {
    let mut pipeline = Pipeline::new(resolved.pipeline.clone());
    let mut batcher = FrameBatcher::new(RecordReader::new(input, options.format));
    let mut next_frame: Option<u64> = None;

    while let Some((frame, batch)) = batcher.next_batch()? {
        let batch = validate_stream(batch)
            .map_err(|e| CliError::Input(format!("frame {frame}: {e}")))?;
        // The tracker sees every integer frame; input gaps are coasted.
        if let Some(next) = next_frame {
            for missing in next..frame {
                process_one(&mut pipeline, missing, &[], out, options)?;
            }
        }
        process_one(&mut pipeline, frame, &batch, out, options)?;
        out.flush()?;
        next_frame = Some(frame + 1);
    }
    out.flush()?;
    Ok(())
}

fn process_one(
    pipeline: &mut Pipeline,
    frame: u64,
    observations: &[Observation],
    out: &mut impl Write,
    options: &DetectOptions,
) -> Result<(), CliError> {
    let output = pipeline
        .process_frame(frame, observations)
        .map_err(|e| CliError::Input(format!("frame {frame}: {e}")))?;
    if options.verbose_scores {
        for (agent, score) in &output.detections.scores {
            let position = if options.retain_events_only {
                None
            } else {
                output.crowd.agents.get(agent).map(|a| a.state.position)
            };
            formats::write_score(out, frame, agent, *score, position)?;
        }
    }
    for event in &output.detections.events {
        formats::write_event(out, event)?;
    }
    Ok(())
}
