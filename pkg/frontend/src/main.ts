import { ApiClient } from "./api";
import { ReviewApp } from "./app";

const app = new ReviewApp(new ApiClient(), document);
void app.start();
