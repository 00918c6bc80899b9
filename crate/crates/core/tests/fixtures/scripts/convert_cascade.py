"""Rewrite an OpenCV cascade in the current stump format as the old-style
Haar schema (`<size>`, `<stages>/<trees>` with inline features).

usage: convert_cascade.py IN.xml OUT.xml NAME
"""
import re
import sys
import xml.etree.ElementTree as ET

src, dst, name = sys.argv[1:4]
text = open(src, encoding="utf-8").read()
notice = re.search(r"<!--.*?-->", text, re.S)
root = ET.fromstring(text).find("cascade")
assert root.findtext("featureType").strip() == "HAAR"
w, h = int(root.findtext("width")), int(root.findtext("height"))
features = [[r.text.strip() for r in f.find("rects")] for f in root.find("features")]
tilted = [f.findtext("tilted", "0").strip() for f in root.find("features")]

out = ['<?xml version="1.0"?>']
if notice:
    out.append(notice.group(0))
out.append("<opencv_storage>")
out.append(f'<{name} type_id="opencv-haar-classifier">')
out.append(f"  <size>{w} {h}</size>")
out.append("  <stages>")
for si, stage in enumerate(root.find("stages")):
    out.append(f"    <_>")
    out.append(f"      <!-- stage {si} -->")
    out.append("      <trees>")
    for wc in stage.find("weakClassifiers"):
        nodes = wc.findtext("internalNodes").split()
        leaves = wc.findtext("leafValues").split()
        assert len(nodes) == 4 and nodes[:2] == ["0", "-1"], nodes
        fi, thr = int(nodes[2]), nodes[3]
        out.append("        <_>")
        out.append("          <_>")
        out.append("            <feature>")
        out.append("              <rects>")
        for r in features[fi]:
            out.append(f"                <_>{r}</_>")
        out.append("              </rects>")
        out.append(f"              <tilted>{tilted[fi]}</tilted></feature>")
        out.append(f"            <threshold>{thr}</threshold>")
        out.append(f"            <left_val>{leaves[0]}</left_val>")
        out.append(f"            <right_val>{leaves[1]}</right_val></_></_>")
    out.append("      </trees>")
    out.append(f"      <stage_threshold>{stage.findtext('stageThreshold').strip()}</stage_threshold>")
    out.append(f"      <parent>{si - 1}</parent>")
    out.append("      <next>-1</next></_>")
out.append("  </stages>")
out.append(f"</{name}>")
out.append("</opencv_storage>")
open(dst, "w", encoding="utf-8").write("\n".join(out) + "\n")
