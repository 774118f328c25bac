/**
 * Gateway connection
 *
 * Wraps a net.Socket with newline framing and typed events:
 *
 *   'event'  (event: GatewayEvent)   one parsed frame
 *   'status' (connected: boolean)    socket went up / down
 *   'bad-frame' (message: string)    a line the parser refused
 *
 * Reconnects on its own (fixed delay) until close() is called, so a
 * gateway restart just flips the banner instead of killing the console.
 */

import { EventEmitter } from 'events';
import * as net from 'net';

import {
  type ConsoleCommand,
  type GatewayEvent,
  ProtocolError,
  encodeCommand,
  parseEventLine,
} from './protocol.js';

export interface ConnectionOptions {
  host?: string;
  port: number;
  /** Milliseconds between reconnect attempts; 0 disables reconnecting. */
  reconnectMs?: number;
}

export class GatewayConnection extends EventEmitter {
  private readonly host: string;
  private readonly port: number;
  private readonly reconnectMs: number;
  private socket: net.Socket | null = null;
  private buffer = '';
  private closed = false;
  private timer: NodeJS.Timeout | null = null;

  constructor(options: ConnectionOptions) {
    super();
    this.host = options.host ?? '127.0.0.1';
    this.port = options.port;
    this.reconnectMs = options.reconnectMs ?? 1000;
  }

  connect(): void {
    if (this.closed || this.socket) {
      return;
    }
    const socket = net.createConnection({ host: this.host, port: this.port });
    this.socket = socket;
    socket.setEncoding('utf8');
    socket.on('connect', () => this.emit('status', true));
    socket.on('data', (chunk: string) => this.feed(chunk));
    socket.on('error', () => {
      /* 'close' always follows; reconnect happens there */
    });
    socket.on('close', () => {
      this.socket = null;
      this.buffer = '';
      this.emit('status', false);
      if (!this.closed && this.reconnectMs > 0) {
        this.timer = setTimeout(() => this.connect(), this.reconnectMs);
      }
    });
  }

  private feed(chunk: string): void {
    this.buffer += chunk;
    let newline: number;
    while ((newline = this.buffer.indexOf('\n')) >= 0) {
      const line = this.buffer.slice(0, newline).trim();
      this.buffer = this.buffer.slice(newline + 1);
      if (!line) {
        continue;
      }
      let event: GatewayEvent;
      try {
        event = parseEventLine(line);
      } catch (err) {
        if (err instanceof ProtocolError) {
          this.emit('bad-frame', err.message);
          continue;
        }
        throw err;
      }
      this.emit('event', event);
    }
  }

  get connected(): boolean {
    return this.socket !== null && !this.socket.connecting;
  }

  /**
   * Write exactly one command frame. Returns false (and writes nothing)
   * when the socket is down.
   */
  send(command: ConsoleCommand): boolean {
    if (!this.connected || this.socket === null) {
      return false;
    }
    this.socket.write(encodeCommand(command));
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.timer) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.socket?.destroy();
    this.socket = null;
  }
}
