#!/usr/bin/env python3
"""Writes the bundled ~1MB fixture corpus (JSON lines) deterministically.

Mix of English and Chinese documents under the real dataset names, with
planted near-duplicates, junk that the heuristic filter should drop, and a
handful of malformed lines.
"""

import argparse
import json
import random

EN_SOURCES = ["Wikipedia", "C4", "Arxiv", "Common Crawl", "Book", "Stackexchange"]
ZH_SOURCES = ["Webtext", "News", "Law"]

COMMON = ("the of and to in is that for it as was with be by on not he this are or his from at which but have an "
          "they you were her she there been one all we their has would when if so no will more can who what its "
          "out into them only some other then these than could time may about over also after new first two").split()

TOPICS = {
    "Wikipedia": "city river history century empire population region war king museum language culture island "
                 "mountain treaty dynasty capital province census railway cathedral".split(),
    "C4": "product customer service price shipping offer quality review store order team business online "
          "website support delivery brand company market deal".split(),
    "Arxiv": "model theorem proof algorithm bound matrix gradient network energy particle dimension estimate "
             "lemma operator sequence parameter function space convergence entropy".split(),
    "Common Crawl": "people home family school game music video news life world health food travel city "
                    "party friend weekend phone movie photo".split(),
    "Book": "night door window letter garden voice morning eyes heart road silence fire storm horse candle "
            "father mother stranger journey secret".split(),
    "Stackexchange": "question answer error code function file server version install compile variable "
                     "library database query string array loop thread memory".split(),
}

VERBS = ("describes shows contains builds reaches follows explains supports changes creates uses finds keeps "
         "brings holds moves opens covers improves returns").split()
ADJ = "large small early modern simple common local main general new old certain strong recent public".split()

ZH_CHARS = ("的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成会可主发年动同工也能下过子说产种面而方后多定"
            "行学法所民得经十三之进着等部度家电力里如水化高自二理起小物现实加量都两体制机当使点从业本去把性好应开它合还因由其些"
            "然前外天政四日那社义事平形相全表间样与关各重新线内数正心反你明看原又么利比或但质气第向道命此变条只没结解问意建月公"
            "无系军很情者最立代想已通并提直题党程展五果料象员革位入常文总次品式活设及管特件长求老头基资边流路级少图山统接知较将"
            "组见计别她手角期根论运农指几九区强放决西被干做必战先回则任取据处府研质")
ZH_TOPIC = {
    "Webtext": "网络用户平台服务信息生活城市朋友时间工作",
    "News": "记者报道政府会议发展经济市场企业国际消息",
    "Law": "法院条例规定合同责任当事人权利义务判决依法",
}


def en_sentence(rng, topic):
    n = rng.randint(8, 22)
    words = []
    for i in range(n):
        r = rng.random()
        if r < 0.45:
            words.append(rng.choice(COMMON))
        elif r < 0.75:
            words.append(rng.choice(TOPICS[topic]))
        elif r < 0.88:
            words.append(rng.choice(VERBS))
        elif r < 0.97:
            words.append(rng.choice(ADJ))
        else:
            words.append(str(rng.randint(2, 2024)))
    s = " ".join(words)
    if rng.random() < 0.3:
        k = rng.randint(2, len(words) - 2)
        s = " ".join(words[:k]) + ", " + " ".join(words[k:])
    return s[0].upper() + s[1:] + rng.choice([".", ".", ".", "?", "!"])


def en_doc(rng, topic):
    paras = []
    for _ in range(rng.randint(2, 6)):
        paras.append(" ".join(en_sentence(rng, topic) for _ in range(rng.randint(2, 5))))
    return "\n\n".join(paras)


def zh_sentence(rng, topic):
    n = rng.randint(10, 24)
    chars = []
    for _ in range(n):
        pool = ZH_TOPIC[topic] if rng.random() < 0.3 else ZH_CHARS
        chars.append(rng.choice(pool))
    if rng.random() < 0.3:
        chars.insert(rng.randint(3, n - 3), "，")
    if rng.random() < 0.1:
        chars.insert(rng.randint(1, n - 1), str(rng.randint(1990, 2024)))
    return "".join(chars) + rng.choice(["。", "。", "！", "？"])


def zh_doc(rng, topic):
    paras = []
    for _ in range(rng.randint(3, 6)):
        paras.append("".join(zh_sentence(rng, topic) for _ in range(rng.randint(3, 6))))
    return "\n".join(paras)


def perturb_en(rng, text):
    words = text.split(" ")
    for _ in range(rng.randint(1, 2)):
        i = rng.randrange(len(words) - 1, len(words))
        words[i] = rng.choice(COMMON) + "."
    return " ".join(words)


def junk(rng, kind):
    if kind == "short":
        return "Click here. Buy now!"
    if kind == "punct":
        return "".join(rng.choice("!!??##$$%%&&**@@~~--==++..,,;;") + rng.choice("abc ") for _ in range(300))
    if kind == "lines":
        return "\n".join(rng.choice(["Home", "Menu", "Login", "Cart", "FAQ", "Contact us", "Next"]) for _ in range(80))
    raise ValueError(kind)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--target-bytes", type=int, default=1_080_000)
    args = ap.parse_args()
    rng = random.Random(args.seed)

    records = []
    size = 0
    n = 0
    originals = []
    while size < args.target_bytes * 0.88:
        n += 1
        if rng.random() < 0.7:
            src = rng.choice(EN_SOURCES)
            doc = {"id": f"fx-{n:06d}", "text": en_doc(rng, src), "source": src, "lang": "en"}
        else:
            src = rng.choice(ZH_SOURCES)
            doc = {"id": f"fx-{n:06d}", "text": zh_doc(rng, src), "source": src, "lang": "zh"}
        line = json.dumps(doc, ensure_ascii=False)
        records.append(line)
        size += len(line.encode("utf-8")) + 1
        if doc["lang"] == "en":
            originals.append(doc)

    # Planted near-duplicates and exact copies of English documents.
    for i, base in enumerate(rng.sample(originals, 60)):
        n += 1
        text = base["text"] if i % 4 == 0 else perturb_en(rng, base["text"])
        records.append(json.dumps({"id": f"fx-{n:06d}", "text": text, "source": base["source"], "lang": "en"},
                                  ensure_ascii=False))
    for i in range(24):
        n += 1
        kind = ["short", "punct", "lines"][i % 3]
        records.append(json.dumps({"id": f"fx-{n:06d}", "text": junk(rng, kind), "source": "Common Crawl",
                                   "lang": "en"}))
    records.append('{"id": "bad-1", "text": "unterminated')
    records.append('{"id": "bad-2", "source": "C4", "lang": "en"}')
    records.append('{"id": "bad-3", "text": "mismatched language", "source": "Law", "lang": "en"}')

    rng.shuffle(records)
    with open(args.out, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r + "\n")


if __name__ == "__main__":
    main()
