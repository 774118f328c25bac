/**
 * Terminal entry point: wire connection -> model -> renderer, and keys
 * -> commands.
 *
 *   node dist/main.js [--host 127.0.0.1] [--port 7602]
 */

import * as readline from 'readline';

import { GatewayConnection } from './connection.js';
import {
  applyEvent,
  clickButton,
  clickSilence,
  initialModel,
  setConnected,
  toggleWizardMode,
} from './model.js';
import { DEFAULT_GATEWAY_PORT, type GatewayEvent } from './protocol.js';
import { renderModel } from './render.js';

function parseArgs(argv: string[]): { host: string; port: number } {
  let host = '127.0.0.1';
  let port = DEFAULT_GATEWAY_PORT;
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i] === '--host' && argv[i + 1]) {
      host = argv[++i] as string;
    } else if (argv[i] === '--port' && argv[i + 1]) {
      port = Number(argv[++i]);
      if (!Number.isInteger(port) || port <= 0) {
        console.error(`bad --port: ${argv[i]}`);
        process.exit(2);
      }
    }
  }
  return { host, port };
}

function main(): void {
  const { host, port } = parseArgs(process.argv.slice(2));
  let model = initialModel();
  const connection = new GatewayConnection({ host, port });

  const redraw = (): void => {
    process.stdout.write('\x1b[2J\x1b[H' + renderModel(model) + '\n');
  };

  connection.on('event', (event: GatewayEvent) => {
    model = applyEvent(model, event);
    redraw();
  });
  connection.on('status', (up: boolean) => {
    model = setConnected(model, up);
    redraw();
  });
  connection.on('bad-frame', (message: string) => {
    process.stderr.write(`bad frame from gateway: ${message}\n`);
  });

  readline.emitKeypressEvents(process.stdin);
  if (process.stdin.isTTY) {
    process.stdin.setRawMode(true);
  }
  process.stdin.on('keypress', (_chunk, key: { name?: string; ctrl?: boolean }) => {
    if (!key.name) {
      return;
    }
    if (key.name === 'q' || (key.ctrl && key.name === 'c')) {
      connection.close();
      process.exit(0);
    } else if (key.name === 'w') {
      model = toggleWizardMode(model);
    } else if (key.name === 'a') {
      connection.send({ type: 'abort' });
    } else if (key.name === '0') {
      const command = clickSilence(model);
      if (command) {
        connection.send(command);
      }
    } else if (/^[1-9]$/.test(key.name)) {
      const command = clickButton(model, Number(key.name) - 1);
      if (command) {
        connection.send(command);
      }
    }
    redraw();
  });

  redraw();
  connection.connect();
}

main();
