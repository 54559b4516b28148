"""Start the HTTP service on a copy of the Zoom pricing, raise a limit on disk
and watch the answer change without a restart.

    python demos/hot_reload.py
"""

import json
import shutil
import tempfile
import time
import urllib.request
from pathlib import Path

from horizon.pricing import ZOOM_PRICING_PATH
from horizon.service import HorizonService, ServiceConfig
from horizon.tokens import verify_token

SECRET = "demo-secret"


def ask(url, assistants):
    body = json.dumps({
        "featureId": "meetings",
        "subscription": {"plan": "BUSINESS"},
        "context": {"meeting": {"assistants": assistants}, "user": {"currentTime": 30}},
    }).encode()
    req = urllib.request.Request(url + "/evaluate", data=body, method="POST")
    with urllib.request.urlopen(req) as resp:
        return verify_token(json.loads(resp.read()), SECRET)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        pricing = Path(tmp) / "zoom.yaml"
        shutil.copy(ZOOM_PRICING_PATH, pricing)
        config = ServiceConfig(secret=SECRET, port=0, pricing_path=str(pricing), poll_interval=0.2)
        service = HorizonService(config).start()
        try:
            print(f"service at {service.url}")
            result = ask(service.url, 350)
            print(f"BUSINESS, 350 assistants: {result['value']} ({result['reason']}, rule {result['ruleId']})")

            text = pricing.read_text().replace("maxAssistantsPerMeeting: 300", "maxAssistantsPerMeeting: 400")
            pricing.write_text(text)
            print("raised the BUSINESS limit to 400 on disk")
            start = time.monotonic()
            while not ask(service.url, 350)["value"]:
                time.sleep(0.05)
            print(f"BUSINESS, 350 assistants: True after {time.monotonic() - start:.2f}s")

            pricing.write_text("plans: [this is not yaml")
            time.sleep(0.5)
            print(f"after a broken edit the last good pricing stays live: {ask(service.url, 350)['value']}")
        finally:
            service.stop()


if __name__ == "__main__":
    main()
