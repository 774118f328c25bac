"""Run the whole conversational stack, live, in one process.

Starts a message broker on an ephemeral port, bridges it with the
console gateway, then brings up the dialogue node so the robot starts
talking.  Point any console at the gateway port (7602 unless you pass
``--gateway-port``) and drive the session by hand:

    $ python3 demos/live_stack.py
    $ nc 127.0.0.1 7602          # in a second terminal
    {"type": "wizard_utterance", "text": "i am ready"}

Every event the consoles see is printed here too, so a lone terminal
still tells the whole story.  Ctrl-C (or the child reaching the final
state) shuts everything down in reverse order.
"""

import argparse
import json
import socket
import sys
import threading
import time

from phrasebot.dialogue import DialogueNode
from phrasebot.gateway import GatewayServer
from phrasebot.portnet import Broker


def tail_events(host: str, port: int) -> None:
    """Connect to the gateway like any console and echo its frames."""
    sock = socket.create_connection((host, port))
    buf = b""
    while True:
        chunk = sock.recv(4096)
        if not chunk:
            return
        buf += chunk
        while b"\n" in buf:
            line, buf = buf.split(b"\n", 1)
            event = json.loads(line)
            print(f"  [{event['type']}] " + json.dumps(event, sort_keys=True))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gateway-port", type=int, default=None)
    parser.add_argument(
        "--time-scale",
        type=float,
        default=1.0,
        help="stretch simulated durations; 1.0 is real time, 0 is instant",
    )
    args = parser.parse_args(argv)

    broker = Broker(port=0).start()
    print(f"broker on ephemeral port {broker.port}")

    # gateway first: the broker never replays messages published before a
    # subscription existed, so the bridge must be listening before the
    # node says its first word
    gateway = GatewayServer(gateway_port=args.gateway_port, broker_port=broker.port).start()
    print(f"gateway on {gateway.host}:{gateway.port} -- connect consoles here")

    threading.Thread(
        target=tail_events, args=(gateway.host, gateway.port), daemon=True
    ).start()

    node = DialogueNode(broker_port=broker.port, time_scale=args.time_scale).start()
    print("dialogue node running; session starts now\n")

    try:
        while not node.machine.finished:
            time.sleep(0.2)
        time.sleep(1.0)  # let the farewell line reach the consoles
        print("\nsession over:", node.state)
    except KeyboardInterrupt:
        print("\ninterrupted")
    finally:
        node.stop()
        gateway.stop()
        broker.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
