//! TCP transport: one reader and one writer thread per connection.
//!
//! Every CONNECT, SUBSCRIBE and PUBLISH is answered with an ACKERR frame
//! (code 0 on success), so clients can stay strictly request/response while
//! DELIVER frames stream in between.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use super::wire::{self, code, read_packet, write_packet, Packet, WireError};
use super::{Broker, Message, Topic};

const POLL_SLICE: Duration = Duration::from_millis(50);

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections. Existing connections run until their
    /// peers hang up.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    /// Blocks on the accept loop (for foreground serving).
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

pub fn serve(broker: Broker, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let accept = thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let broker = broker.clone();
                    thread::spawn(move || {
                        if let Err(e) = handle_connection(broker, stream) {
                            debug!("connection closed: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
    })
}

fn ack(out: &Mutex<BufWriter<TcpStream>>, code: u8, message: impl Into<String>) -> Result<(), WireError> {
    let mut w = out.lock().unwrap_or_else(|e| e.into_inner());
    write_packet(
        &mut *w,
        &Packet::AckErr {
            code,
            message: message.into(),
        },
    )
}

fn handle_connection(broker: Broker, stream: TcpStream) -> Result<(), WireError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let out = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));

    let session = match read_packet(&mut reader)? {
        Some(Packet::Connect { client_id }) => match broker.connect(&client_id) {
            Ok(s) => {
                ack(&out, code::OK, "")?;
                s
            }
            Err(e) => return ack(&out, wire::error_code(&e), e.to_string()),
        },
        Some(_) => return ack(&out, code::PROTOCOL, "expected CONNECT"),
        None => return Ok(()),
    };

    let writer = {
        let broker = broker.clone();
        let session = session.clone();
        let out = out.clone();
        thread::spawn(move || {
            while let Ok(next) = broker.poll_timeout(&session, POLL_SLICE) {
                let Some(msg) = next else { continue };
                let packet = Packet::Deliver {
                    retain: msg.retain,
                    seq: msg.seq,
                    topic: msg.topic.as_str().to_string(),
                    body: msg.payload,
                };
                let mut w = out.lock().unwrap_or_else(|e| e.into_inner());
                if write_packet(&mut *w, &packet).is_err() {
                    broker.disconnect(&session);
                    break;
                }
            }
        })
    };

    let result = (|| loop {
        let reply = match read_packet(&mut reader)? {
            None => return Ok(()),
            Some(Packet::Subscribe { filter }) => broker.subscribe(&session, &filter),
            Some(Packet::Publish { retain, topic, body }) => {
                broker.publish(&session, &topic, &body, retain).map(|_| ())
            }
            Some(_) => {
                ack(&out, code::PROTOCOL, "unexpected packet")?;
                return Ok(());
            }
        };
        match reply {
            Ok(()) => ack(&out, code::OK, "")?,
            Err(e) => ack(&out, wire::error_code(&e), e.to_string())?,
        }
    })();

    broker.disconnect(&session);
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
    result
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("broker rejected request (code {code}): {message}")]
    Rejected { code: u8, message: String },
    #[error("connection to broker lost")]
    Disconnected,
    #[error("broker did not answer in time")]
    Timeout,
}

/// Blocking TCP client.
pub struct BrokerClient {
    out: BufWriter<TcpStream>,
    acks: Receiver<(u8, String)>,
    deliveries: Receiver<Message>,
    stream: TcpStream,
    reader: Option<JoinHandle<()>>,
    ack_timeout: Duration,
}

impl BrokerClient {
    pub fn connect(addr: impl ToSocketAddrs, client_id: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(WireError::from)?;
        stream.set_nodelay(true).map_err(WireError::from)?;
        let (ack_tx, acks) = mpsc::channel();
        let (msg_tx, deliveries) = mpsc::channel();
        let mut inbound = BufReader::new(stream.try_clone().map_err(WireError::from)?);
        let reader = thread::spawn(move || loop {
            match read_packet(&mut inbound) {
                Ok(Some(Packet::AckErr { code, message })) => {
                    if ack_tx.send((code, message)).is_err() {
                        break;
                    }
                }
                Ok(Some(Packet::Deliver {
                    retain,
                    seq,
                    topic,
                    body,
                })) => {
                    let Ok(topic) = Topic::new(&topic) else {
                        warn!("broker delivered invalid topic `{topic}`");
                        continue;
                    };
                    let msg = Message {
                        topic,
                        payload: body,
                        retain,
                        seq,
                    };
                    if msg_tx.send(msg).is_err() {
                        break;
                    }
                }
                Ok(Some(other)) => warn!("unexpected packet from broker: {other:?}"),
                Ok(None) | Err(_) => break,
            }
        });
        let mut client = Self {
            out: BufWriter::new(stream.try_clone().map_err(WireError::from)?),
            acks,
            deliveries,
            stream,
            reader: Some(reader),
            ack_timeout: Duration::from_secs(10),
        };
        client.request(&Packet::Connect {
            client_id: client_id.into(),
        })?;
        Ok(client)
    }

    fn request(&mut self, packet: &Packet) -> Result<(), ClientError> {
        write_packet(&mut self.out, packet)?;
        match self.acks.recv_timeout(self.ack_timeout) {
            Ok((code::OK, _)) => Ok(()),
            Ok((code, message)) => Err(ClientError::Rejected { code, message }),
            Err(RecvTimeoutError::Timeout) => Err(ClientError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Disconnected),
        }
    }

    pub fn subscribe(&mut self, filter: &str) -> Result<(), ClientError> {
        self.request(&Packet::Subscribe { filter: filter.into() })
    }

    pub fn publish(&mut self, topic: &str, body: &[u8], retain: bool) -> Result<(), ClientError> {
        self.request(&Packet::Publish {
            retain,
            topic: topic.into(),
            body: body.to_vec(),
        })
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Message>, ClientError> {
        match self.deliveries.recv_timeout(timeout) {
            Ok(m) => Ok(Some(m)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Disconnected),
        }
    }
}

impl Drop for BrokerClient {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tcp_round_trip() {
        let broker = Broker::new();
        let server = serve(broker.clone(), "127.0.0.1:0").unwrap();
        let addr = server.local_addr();

        let mut sub = BrokerClient::connect(addr, "gw").unwrap();
        let mut publ = BrokerClient::connect(addr, "sensor").unwrap();
        publ.publish("agri/storage/S1/temperature", b"38", true).unwrap();
        sub.subscribe("agri/#").unwrap();
        publ.publish("agri/storage/S1/temperature", b"40", false).unwrap();

        let first = sub.recv_timeout(Duration::from_secs(5)).unwrap().unwrap();
        let second = sub.recv_timeout(Duration::from_secs(5)).unwrap().unwrap();
        assert_eq!(
            (first.seq, first.retain, first.payload.as_slice()),
            (1, true, &b"38"[..])
        );
        assert_eq!(
            (second.seq, second.retain, second.payload.as_slice()),
            (2, false, &b"40"[..])
        );

        assert!(matches!(
            BrokerClient::connect(addr, "gw"),
            Err(ClientError::Rejected {
                code: code::DUPLICATE_CLIENT,
                ..
            })
        ));
        assert!(matches!(
            sub.subscribe("a/#/b"),
            Err(ClientError::Rejected {
                code: code::BAD_FILTER,
                ..
            })
        ));
        assert!(matches!(
            publ.publish("a/#", b"", false),
            Err(ClientError::Rejected {
                code: code::BAD_TOPIC,
                ..
            })
        ));

        drop(sub);
        // The server notices the hang-up and frees the client id.
        let mut reconnected = None;
        for _ in 0..100 {
            if let Ok(c) = BrokerClient::connect(addr, "gw") {
                reconnected = Some(c);
                break;
            }
            thread::sleep(Duration::from_millis(20));
        }
        assert!(reconnected.is_some());
        server.shutdown();
    }
}
