import { EngineClient } from "./api.js";
import { Dashboard } from "./cards.js";
import { EventFeed } from "./feed.js";

const params = new URLSearchParams(window.location.search);
const engineUrl = params.get("engine") ?? window.location.origin;

const client = new EngineClient(engineUrl);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

const dashboard = new Dashboard(root, client);
const feed = new EventFeed(client.eventsUrl());
feed.onEvent = (event) => dashboard.handleEvent(event);
feed.onStatus = (connected) => dashboard.setConnected(connected);

dashboard
    .init()
    .then(() => feed.start())
    .catch(() => {
        root.textContent = `engine unreachable at ${engineUrl}`;
    });
