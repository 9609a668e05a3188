// Hash routing mirrored on the three page types: login -> progress ->
// (learning | diagnosis) -> progress.

export type Route =
  | { page: "login" }
  | { page: "progress" }
  | { page: "learning"; activityId: string }
  | { page: "diagnosis"; diagnosisId: string };

export function parseRoute(hash: string): Route {
  const path = hash.replace(/^#\/?/, "");
  const [head, ...rest] = path.split("/");
  if (head === "learning" && rest.length === 1 && rest[0]) {
    return { page: "learning", activityId: decodeURIComponent(rest[0]) };
  }
  if (head === "diagnosis" && rest.length === 1 && rest[0]) {
    return { page: "diagnosis", diagnosisId: decodeURIComponent(rest[0]) };
  }
  if (head === "progress") return { page: "progress" };
  return { page: "login" };
}

export function routeHash(route: Route): string {
  switch (route.page) {
    case "login":
      return "#/";
    case "progress":
      return "#/progress";
    case "learning":
      return `#/learning/${encodeURIComponent(route.activityId)}`;
    case "diagnosis":
      return `#/diagnosis/${encodeURIComponent(route.diagnosisId)}`;
  }
}

export function navigate(route: Route): void {
  window.location.hash = routeHash(route);
}
