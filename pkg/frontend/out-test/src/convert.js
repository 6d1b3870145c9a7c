/** Client-side preview of the server's exact millisecond-to-second rule:
 * a pure decimal-point shift, no floating point involved. */
const NUMERIC = /^[+-]?(\d+(\.\d*)?|\.\d+)$/;
export function isNumericCell(text) {
    return NUMERIC.test(text);
}
export function divideBy1000(text) {
    let sign = "";
    let digits = text;
    if (digits.startsWith("+") || digits.startsWith("-")) {
        sign = digits[0] === "-" ? "-" : "";
        digits = digits.slice(1);
    }
    const dot = digits.indexOf(".");
    const intPart = (dot === -1 ? digits : digits.slice(0, dot)) || "0";
    const fracPart = dot === -1 ? "" : digits.slice(dot + 1);
    let newInt;
    let newFrac;
    if (intPart.length > 3) {
        newInt = intPart.slice(0, -3);
        newFrac = intPart.slice(-3) + fracPart;
    }
    else {
        newInt = "0";
        newFrac = intPart.padStart(3, "0") + fracPart;
    }
    newInt = newInt.replace(/^0+(?=\d)/, "");
    newFrac = newFrac.replace(/0+$/, "");
    const out = newInt + (newFrac ? "." + newFrac : "");
    return out === "0" ? "0" : sign + out;
}
/** What a time-based cell will look like after conversion. */
export function previewCell(value, unit) {
    if (!isNumericCell(value))
        return "n/a";
    return unit === "milliseconds" ? divideBy1000(value) : value;
}
